#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "tfm/ops.hpp"
#include "tfm/rng.hpp"

namespace tfm {

/// Interpolation schedule X_t = alpha(t) X_0 + beta(t) X_1 with derivatives.
class Schedule {
public:
    using Fn = std::function<double(double)>;

    Schedule(std::string name, Fn alpha, Fn beta, Fn alpha_dot, Fn beta_dot)
        : name_(std::move(name)), alpha_(std::move(alpha)), beta_(std::move(beta)), alpha_dot_(std::move(alpha_dot)),
          beta_dot_(std::move(beta_dot)) {
        constexpr double tol = 1e-12;
        if (std::abs(alpha_(0.0) - 1.0) > tol || std::abs(beta_(0.0)) > tol || std::abs(alpha_(1.0)) > tol ||
            std::abs(beta_(1.0) - 1.0) > tol) {
            throw ContractError("schedule '" + name_ + "' violates alpha(0)=1, beta(0)=0, alpha(1)=0, beta(1)=1");
        }
    }

    static Schedule linear() {
        return {"linear", [](double t) { return 1.0 - t; }, [](double t) { return t; }, [](double) { return -1.0; },
                [](double) { return 1.0; }};
    }

    /// alpha = cos(pi t / 2), beta = sin(pi t / 2).
    static Schedule cosine() {
        constexpr double h = std::numbers::pi / 2.0;
        return {"cosine",
                [](double t) { return std::cos(h * t); },
                [](double t) { return std::sin(h * t); },
                [](double t) { return -h * std::sin(h * t); },
                [](double t) { return h * std::cos(h * t); }};
    }

    const std::string& name() const noexcept { return name_; }
    double alpha(double t) const { return alpha_(t); }
    double beta(double t) const { return beta_(t); }
    double alpha_dot(double t) const { return alpha_dot_(t); }
    double beta_dot(double t) const { return beta_dot_(t); }

private:
    std::string name_;
    Fn alpha_;
    Fn beta_;
    Fn alpha_dot_;
    Fn beta_dot_;
};

struct TimePair {
    double t = 0.0;
    double r = 0.0;

    TimePair() = default;
    TimePair(double t_, double r_) : t(t_), r(r_) {
        if (!(0.0 <= t && t <= r && r <= 1.0)) {
            throw ContractError("time pair requires 0 <= t <= r <= 1, got t=" + std::to_string(t) +
                                " r=" + std::to_string(r));
        }
    }
};

enum class TimeSamplerKind { UNIFORM, LOGNORM };

/// Sampler for (t, r). The offset variable d uses `d_mu`/`d_sigma` when
/// given, otherwise the same (mu, sigma) as t.
struct TimeSamplerConfig {
    TimeSamplerKind kind = TimeSamplerKind::LOGNORM;
    double mu = -0.4;
    double sigma = 1.0;
    std::optional<double> d_mu;
    std::optional<double> d_sigma;

    void validate() const {
        if (kind == TimeSamplerKind::LOGNORM && (!(sigma > 0.0) || (d_sigma && !(*d_sigma > 0.0)))) {
            throw ContractError("logit-normal sampler needs sigma > 0");
        }
    }

    bool operator==(const TimeSamplerConfig&) const = default;
};

struct CouplingSample {
    Tensor x0;
    Tensor x1;
    std::optional<int> label;
};

inline Tensor interpolate(const Tensor& x0, const Tensor& x1, double t, const Schedule& sched = Schedule::linear()) {
    require_same_shape(x0, x1, "interpolate");
    Tensor out(x0.shape());
    const double a = sched.alpha(t);
    const double b = sched.beta(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0[i] + b * x1[i];
    }
    return out;
}

inline Tensor conditional_velocity(const Tensor& x0, const Tensor& x1, double t,
                                   const Schedule& sched = Schedule::linear()) {
    require_same_shape(x0, x1, "conditional_velocity");
    Tensor out(x0.shape());
    const double a = sched.alpha_dot(t);
    const double b = sched.beta_dot(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a * x0[i] + b * x1[i];
    }
    return out;
}

/// State at r reached from the coupling endpoints; independent of t.
inline Tensor conditional_transition(const Tensor& x0, const Tensor& x1, double r,
                                     const Schedule& sched = Schedule::linear()) {
    return interpolate(x0, x1, r, sched);
}

/// Row-wise interpolation for batches: x0, x1 `[n x d]`, s `[n x 1]`.
inline Tensor interpolate_rows(const Tensor& x0, const Tensor& x1, const Tensor& s,
                               const Schedule& sched = Schedule::linear()) {
    require_same_shape(x0, x1, "interpolate_rows");
    Tensor out(x0.shape());
    const std::size_t d = x0.cols();
    for (std::size_t i = 0; i < x0.rows(); ++i) {
        const double a = sched.alpha(s[i]);
        const double b = sched.beta(s[i]);
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = a * x0(i, j) + b * x1(i, j);
        }
    }
    return out;
}

inline Tensor conditional_velocity_rows(const Tensor& x0, const Tensor& x1, const Tensor& s,
                                        const Schedule& sched = Schedule::linear()) {
    require_same_shape(x0, x1, "conditional_velocity_rows");
    Tensor out(x0.shape());
    const std::size_t d = x0.cols();
    for (std::size_t i = 0; i < x0.rows(); ++i) {
        const double a = sched.alpha_dot(s[i]);
        const double b = sched.beta_dot(s[i]);
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = a * x0(i, j) + b * x1(i, j);
        }
    }
    return out;
}

/// r = t + d (1 - t) for given draws (t, d) in [0, 1].
inline TimePair time_pair_from(double t, double d) { return TimePair(t, std::min(1.0, t + d * (1.0 - t))); }

inline double sample_unit_time(TimeSamplerKind kind, double mu, double sigma, Rng& rng) {
    if (kind == TimeSamplerKind::UNIFORM) {
        return rng.uniform();
    }
    return logistic(rng.normal(mu, sigma));
}

inline TimePair sample_time_pair(const TimeSamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    const double t = sample_unit_time(cfg.kind, cfg.mu, cfg.sigma, rng);
    const double d = sample_unit_time(cfg.kind, cfg.d_mu.value_or(cfg.mu), cfg.d_sigma.value_or(cfg.sigma), rng);
    return time_pair_from(t, d);
}

/// Average velocity view of a transition: (X - x_t) / (r - t). Requires r > t.
inline Tensor u_from_X(const Tensor& x_out, const Tensor& x_t, const TimePair& pair) {
    require_same_shape(x_out, x_t, "u_from_X");
    if (!(pair.r > pair.t)) {
        throw ContractError("u_from_X: r must exceed t (interval length is zero)");
    }
    const double dt = pair.r - pair.t;
    Tensor out(x_out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (x_out[i] - x_t[i]) / dt;
    }
    return out;
}

} // namespace tfm
