#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tfm {

/// Explicit random state. Every stochastic operation takes one of these by
/// reference; there is no hidden global generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    /// Independent stream derived from (seed, stream id).
    Rng fork(std::uint64_t stream) const {
        std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x7f4a7c15u};
        Rng out(seed_ ^ (stream * 0x9e3779b97f4a7c15ull));
        out.engine_.seed(seq);
        return out;
    }

    double uniform() { return std::generate_canonical<double, 53>(engine_); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() { return normal_(engine_); }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace tfm
