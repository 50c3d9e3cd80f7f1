#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tfm/baseline_fm.hpp"
#include "tfm/nets.hpp"

namespace tfm {

/// Strictly increasing knots from exactly 0 to exactly 1.
class TimeGrid {
public:
    explicit TimeGrid(std::vector<double> knots) : knots_(std::move(knots)) {
        if (knots_.size() < 2) {
            throw ContractError("time grid needs at least two knots");
        }
        if (knots_.front() != 0.0 || knots_.back() != 1.0) {
            throw ContractError("time grid must start at 0 and end at 1");
        }
        for (std::size_t k = 1; k < knots_.size(); ++k) {
            if (!(knots_[k] > knots_[k - 1])) {
                throw ContractError("time grid knots must be strictly increasing");
            }
        }
    }

    /// Knots k / K for k = 0..K.
    static TimeGrid uniform(std::size_t intervals) {
        if (intervals == 0) {
            throw ContractError("uniform grid needs at least one interval");
        }
        std::vector<double> k(intervals + 1);
        for (std::size_t i = 0; i <= intervals; ++i) {
            k[i] = static_cast<double>(i) / static_cast<double>(intervals);
        }
        k.back() = 1.0;
        return TimeGrid(std::move(k));
    }

    /// Comma-separated knot list, e.g. "0,0.3,1".
    static TimeGrid parse(const std::string& text) {
        std::vector<double> k;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(item, &used);
            } catch (const std::exception&) {
                throw ValidationError("grid", "cannot parse knot '" + item + "'");
            }
            while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) {
                ++used;
            }
            if (used != item.size()) {
                throw ValidationError("grid", "cannot parse knot '" + item + "'");
            }
            k.push_back(v);
        }
        try {
            return TimeGrid(std::move(k));
        } catch (const ContractError& e) {
            throw ValidationError("grid", e.what());
        }
    }

    const std::vector<double>& knots() const noexcept { return knots_; }
    std::size_t intervals() const noexcept { return knots_.size() - 1; }

    bool operator==(const TimeGrid&) const = default;

private:
    std::vector<double> knots_;
};

struct Snapshot {
    double time = 0.0;
    Tensor batch;
};

class Trajectory {
public:
    void record(double time, const Tensor& batch) {
        if (!states_.empty()) {
            if (!(time > states_.back().time)) {
                throw ContractError("trajectory times must be strictly increasing");
            }
            if (batch.shape() != states_.front().batch.shape()) {
                throw ShapeError("trajectory batch shape changed");
            }
        }
        states_.push_back({time, batch});
    }

    const std::vector<Snapshot>& states() const noexcept { return states_; }
    bool empty() const noexcept { return states_.empty(); }
    std::size_t knots() const noexcept { return states_.size(); }
    std::size_t points() const { return states_.empty() ? 0 : states_.front().batch.rows(); }
    std::size_t dim() const { return states_.empty() ? 0 : states_.front().batch.cols(); }

private:
    std::vector<Snapshot> states_;
};

struct SampleResult {
    Tensor samples;
    Trajectory trajectory;
    std::size_t model_calls = 0;
};

inline void check_finite_state(const Tensor& x, std::size_t step, const char* who) {
    if (!x.all_finite()) {
        throw NumericalError(std::string(who) + ": non-finite state after step " + std::to_string(step));
    }
}

/// Guided transition omega X(.|c) + (1 - omega) X(.|null).
inline Tensor cfg_forward(const TfmModel& model, const Tensor& x, double t, double r, const ClassIds& classes,
                          double omega) {
    if (model.config.n_classes == 0) {
        throw UnsupportedOpError("classifier-free guidance needs a class-conditional model");
    }
    const Tensor cond = forward(model, x, t, r, classes);
    const Tensor uncond = forward(model, x, t, r, ClassIds{});
    Tensor out(cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = omega * cond[i] + (1.0 - omega) * uncond[i];
    }
    return out;
}

inline Tensor cfg_forward(const TfmModel& model, const Tensor& x, double t, double r, int class_id, double omega) {
    const std::size_t n = x.rank() == 1 ? 1 : x.rows();
    return cfg_forward(model, x, t, r, ClassIds(n, class_id), omega);
}

/// Recursive transition sampling over `grid` with an arbitrary step
/// callable `step(x, t, r) -> Tensor`. Counts calls of `step`.
template <class Step>
SampleResult sample_with(Step&& step, const Tensor& x0, const TimeGrid& grid, std::size_t calls_per_step = 1) {
    if (x0.rank() != 2) {
        throw ShapeError("sampling expects a batch [n x d]");
    }
    SampleResult out;
    const auto& k = grid.knots();
    Tensor x = x0;
    out.trajectory.record(k.front(), x);
    for (std::size_t i = 0; i + 1 < k.size(); ++i) {
        x = step(x, k[i], k[i + 1]);
        out.model_calls += calls_per_step;
        check_finite_state(x, i, "sample_multistep");
        out.trajectory.record(k[i + 1], x);
    }
    out.samples = std::move(x);
    return out;
}

inline SampleResult sample_multistep(const TfmModel& model, const Tensor& x0, const TimeGrid& grid,
                                     const ClassIds& classes = {}, std::optional<double> cfg_scale = std::nullopt) {
    if (cfg_scale) {
        return sample_with(
            [&](const Tensor& x, double t, double r) { return cfg_forward(model, x, t, r, classes, *cfg_scale); }, x0,
            grid, 2);
    }
    return sample_with([&](const Tensor& x, double t, double r) { return forward(model, x, t, r, classes); }, x0, grid);
}

inline Tensor sample_onestep(const TfmModel& model, const Tensor& x0, const ClassIds& classes = {},
                             std::optional<double> cfg_scale = std::nullopt) {
    return sample_multistep(model, x0, TimeGrid({0.0, 1.0}), classes, cfg_scale).samples;
}

/// Forward Euler on dx/dt = v(x, t) with `n_steps` uniform steps.
inline SampleResult euler_ode_trajectory(const FmModel& model, const Tensor& x0, std::size_t n_steps,
                                         const ClassIds& classes = {}) {
    if (n_steps == 0) {
        throw ContractError("euler_ode_sample needs at least one step");
    }
    if (x0.rank() != 2) {
        throw ShapeError("sampling expects a batch [n x d]");
    }
    const TimeGrid grid = TimeGrid::uniform(n_steps);
    SampleResult out;
    Tensor x = x0;
    out.trajectory.record(0.0, x);
    for (std::size_t i = 0; i < n_steps; ++i) {
        const double t = grid.knots()[i];
        const double h = grid.knots()[i + 1] - t;
        const Tensor v = fm_forward(model, x, t, classes);
        for (std::size_t j = 0; j < x.size(); ++j) {
            x[j] += h * v[j];
        }
        ++out.model_calls;
        check_finite_state(x, i, "euler_ode_sample");
        out.trajectory.record(grid.knots()[i + 1], x);
    }
    out.samples = std::move(x);
    return out;
}

inline Tensor euler_ode_sample(const FmModel& model, const Tensor& x0, std::size_t n_steps,
                               const ClassIds& classes = {}) {
    return euler_ode_trajectory(model, x0, n_steps, classes).samples;
}

/// Mean over rows of ||X(X(x, 0, s), s, 1) - X(x, 0, 1)||; a diagnostic of
/// how far the learned map is from a semigroup.
inline double composition_gap(const TfmModel& model, const Tensor& x0, double s, const ClassIds& classes = {}) {
    if (!(s > 0.0 && s < 1.0)) {
        throw ContractError("composition_gap needs 0 < s < 1");
    }
    const Tensor two = forward(model, forward(model, x0, 0.0, s, classes), s, 1.0, classes);
    const Tensor one = forward(model, x0, 0.0, 1.0, classes);
    double total = 0.0;
    for (std::size_t i = 0; i < one.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < one.cols(); ++c) {
            sq += (two(i, c) - one(i, c)) * (two(i, c) - one(i, c));
        }
        total += std::sqrt(sq);
    }
    const double gap = total / static_cast<double>(one.rows());
    if (!std::isfinite(gap)) {
        throw NumericalError("composition gap is not finite");
    }
    return gap;
}

} // namespace tfm
