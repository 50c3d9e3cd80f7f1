#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tfm/baseline_fm.hpp"
#include "tfm/flowcore.hpp"
#include "tfm/nets.hpp"

namespace tfm {

/// Adaptive loss weighting w = 1 / (||delta||^2 + c)^p, applied stop-gradiented.
struct LossConfig {
    double power_p = 1.0;
    double stabilizer_c = 1e-3;
    double cfg_dropout = 0.1;

    void validate() const {
        if (!(power_p >= 0.0)) {
            throw ContractError("loss power p must be >= 0");
        }
        if (!(stabilizer_c > 0.0)) {
            throw ContractError("loss stabilizer c must be > 0");
        }
        if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0)) {
            throw ContractError("cfg dropout must lie in [0, 1]");
        }
    }

    bool operator==(const LossConfig&) const = default;
};

struct LossReport {
    double weighted_loss = 0.0;
    /// Batch mean of the per-sample squared error ||delta||^2.
    double raw_mse = 0.0;
    double mean_weight = 0.0;
    /// Batch mean of ||target||.
    double target_norm = 0.0;
};

struct LossResult {
    LossReport report;
    ParamSet grads;
};

class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, LossReport report) : NumericalError(what), report_(report) {}
    const LossReport& report() const noexcept { return report_; }

private:
    LossReport report_;
};

inline double adaptive_weight(double delta_sq, const LossConfig& cfg) {
    if (!(delta_sq >= 0.0)) {
        throw ContractError("adaptive_weight: delta_sq must be >= 0");
    }
    if (cfg.power_p == 0.0) {
        return 1.0;
    }
    return 1.0 / std::pow(delta_sq + cfg.stabilizer_c, cfg.power_p);
}

/// A batch drawn from the independent coupling; rows of x0/x1 pair up.
struct CouplingBatch {
    Tensor x0;
    Tensor x1;
    ClassIds labels;

    std::size_t size() const { return x0.rows(); }

    static CouplingBatch from_samples(std::span<const CouplingSample> samples) {
        if (samples.empty()) {
            throw ContractError("coupling batch must be nonempty");
        }
        const std::size_t d = samples.front().x0.size();
        CouplingBatch b{Tensor(Shape{samples.size(), d}), Tensor(Shape{samples.size(), d}), {}};
        bool any_label = false;
        for (const auto& s : samples) {
            any_label = any_label || s.label.has_value();
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            require_same_shape(samples[i].x0, samples[i].x1, "coupling sample");
            if (samples[i].x0.size() != d) {
                throw ShapeError("coupling samples have differing dimensions");
            }
            std::copy(samples[i].x0.storage().begin(), samples[i].x0.storage().end(), b.x0.row(i).begin());
            std::copy(samples[i].x1.storage().begin(), samples[i].x1.storage().end(), b.x1.row(i).begin());
            if (any_label) {
                b.labels.push_back(samples[i].label.value_or(kNullClass));
            }
        }
        return b;
    }
};

inline constexpr double kDivergenceThreshold = 1e6;

namespace objectives_detail {

inline void pair_columns(std::span<const TimePair> pairs, std::size_t n, Tensor& t, Tensor& r) {
    if (pairs.size() != n) {
        throw ShapeError("time pair count " + std::to_string(pairs.size()) + " does not match batch " +
                         std::to_string(n));
    }
    t = Tensor(Shape{n, 1});
    r = Tensor(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        if (!(0.0 <= pairs[i].t && pairs[i].t <= pairs[i].r && pairs[i].r <= 1.0)) {
            throw ContractError("invalid time pair in batch");
        }
        t[i] = pairs[i].t;
        r[i] = pairs[i].r;
    }
}

/// Labels after classifier-free-guidance dropout.
inline ClassIds training_labels(const ModelConfig& cfg, const ClassIds& labels, std::size_t n, double dropout, Rng& rng) {
    if (cfg.n_classes == 0) {
        return {};
    }
    if (labels.size() != n) {
        throw ContractError("class-conditional model needs one label per sample");
    }
    ClassIds out = labels;
    for (int& id : out) {
        if (rng.uniform() < dropout) {
            id = kNullClass;
        }
    }
    return out;
}

inline void guard(const LossReport& rep) {
    if (!std::isfinite(rep.weighted_loss) || !std::isfinite(rep.raw_mse) || rep.weighted_loss > kDivergenceThreshold) {
        std::ostringstream os;
        os << "training diverged: weighted_loss=" << rep.weighted_loss << " raw_mse=" << rep.raw_mse
           << " mean_weight=" << rep.mean_weight << " target_norm=" << rep.target_norm;
        throw DivergenceError(os.str(), rep);
    }
}

} // namespace objectives_detail

/// Per-sample squared errors and stop-gradiented adaptive weights for a
/// prediction against a constant target; returns the scalar loss node.
inline Var weighted_regression(Var prediction, const Tensor& target, const LossConfig& cfg, LossReport& report) {
    const Var sq = ad::sum_cols(ad::square(ad::sub(prediction, target)));
    const Tensor& sq_v = sq.value();
    const std::size_t n = sq_v.size();
    Tensor weights(Shape{n, 1});
    double raw = 0.0;
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        weights[i] = adaptive_weight(std::isfinite(sq_v[i]) ? sq_v[i] : 0.0, cfg);
        raw += sq_v[i];
        wsum += weights[i];
    }
    const Var loss = ad::mean(ad::mul_rows(sq, weights));
    double tnorm = 0.0;
    for (std::size_t i = 0; i < target.rows(); ++i) {
        tnorm += l2_norm(target.row(i));
    }
    report.weighted_loss = loss.value().item();
    report.raw_mse = raw / static_cast<double>(n);
    report.mean_weight = wsum / static_cast<double>(n);
    report.target_norm = tnorm / static_cast<double>(n);
    return loss;
}

/// d/dt X(x_t, t, r) along the tangent (v, 1, 0), together with X itself.
inline ad::JvpResult transition_time_derivative(const TfmModel& model, const Tensor& xt, const Tensor& t,
                                                const Tensor& r, const Tensor& velocity, const ClassIds& classes) {
    const DualTensor out = forward_dual(model, DualTensor(xt, velocity), DualTensor(t, column(t.rows(), 1.0)),
                                        DualTensor(r, column(r.rows(), 0.0)), classes);
    return {out.value, out.tangent};
}

/// Regression target x_{t->r} + (r - t) dX/dt, treated as a constant.
inline Tensor tfm_target(const TfmModel& model, const Tensor& xt, const Tensor& t, const Tensor& r,
                         const Tensor& velocity, const Tensor& transition, const ClassIds& classes = {}) {
    const ad::JvpResult d = transition_time_derivative(model, xt, t, r, velocity, classes);
    return ad::add(transition, ad::mul_rows(d.derivative, ad::sub(r, t)));
}

/// Transition Flow Matching loss on the independent coupling with the linear
/// interpolant. Gradients flow through the model output only.
inline LossResult tfm_loss(const TfmModel& model, const CouplingBatch& batch, std::span<const TimePair> pairs,
                           const LossConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = batch.size();
    if (n == 0) {
        throw ContractError("tfm_loss: empty batch");
    }
    Tensor t;
    Tensor r;
    objectives_detail::pair_columns(pairs, n, t, r);
    const ClassIds labels = objectives_detail::training_labels(model.config, batch.labels, n, cfg.cfg_dropout, rng);

    const Tensor xt = interpolate_rows(batch.x0, batch.x1, t);
    const Tensor v = ad::sub(batch.x1, batch.x0);
    const Tensor xtr = interpolate_rows(batch.x0, batch.x1, r);
    const Tensor target = tfm_target(model, xt, t, r, v, xtr, labels);

    LossResult result;
    ad::Tape tape;
    VarSet vars(tape, model.params);
    const Var pred = forward_var(model.config, vars, xt, t, r, labels);
    const Var loss = weighted_regression(pred, target, cfg, result.report);
    objectives_detail::guard(result.report);
    tape.backward(loss);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        result.grads.add(model.params.entry(i).first, tape.grad(vars.at(i)));
    }
    return result;
}

inline LossResult tfm_loss(const TfmModel& model, std::span<const CouplingSample> batch, std::span<const TimePair> pairs,
                           const LossConfig& cfg, Rng& rng) {
    return tfm_loss(model, CouplingBatch::from_samples(batch), pairs, cfg, rng);
}

/// Flow Matching baseline loss: regress v(x_t, t) onto x1 - x0.
inline LossResult fm_loss(const FmModel& model, const CouplingBatch& batch, std::span<const double> times,
                          const LossConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = batch.size();
    if (n == 0) {
        throw ContractError("fm_loss: empty batch");
    }
    if (times.size() != n) {
        throw ShapeError("fm_loss: time count does not match batch");
    }
    const Tensor t = column(times);
    const ClassIds labels = objectives_detail::training_labels(model.config, batch.labels, n, cfg.cfg_dropout, rng);
    const Tensor xt = interpolate_rows(batch.x0, batch.x1, t);
    const Tensor target = ad::sub(batch.x1, batch.x0);

    LossResult result;
    ad::Tape tape;
    VarSet vars(tape, model.params);
    const Var pred = fm_forward_var(model.config, vars, xt, t, labels);
    const Var loss = weighted_regression(pred, target, cfg, result.report);
    objectives_detail::guard(result.report);
    tape.backward(loss);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        result.grads.add(model.params.entry(i).first, tape.grad(vars.at(i)));
    }
    return result;
}

/// Per-row ||X(x_t,t,r) - x_{t->r} - (r - t) dX/dt|| with the time derivative
/// taken along the supplied (marginal) velocity.
inline std::vector<double> identity_residuals(const TfmModel& model, const Tensor& xt, const Tensor& t, const Tensor& r,
                                              const Tensor& marginal_transition, const Tensor& marginal_velocity,
                                              const ClassIds& classes = {}) {
    const ad::JvpResult d = transition_time_derivative(model, xt, t, r, marginal_velocity, classes);
    const Tensor resid = ad::sub(ad::sub(d.output, marginal_transition), ad::mul_rows(d.derivative, ad::sub(r, t)));
    std::vector<double> out(resid.rows());
    for (std::size_t i = 0; i < resid.rows(); ++i) {
        out[i] = l2_norm(resid.row(i));
    }
    return out;
}

inline double identity_residual(const TfmModel& model, const Tensor& x_t, const TimePair& pair,
                                const Tensor& marginal_transition, const Tensor& marginal_velocity,
                                std::optional<int> class_id = std::nullopt) {
    ClassIds ids;
    if (class_id) {
        ids.push_back(*class_id);
    }
    return identity_residuals(model, x_t.as_matrix(), column(1, pair.t), column(1, pair.r),
                              marginal_transition.as_matrix(), marginal_velocity.as_matrix(), ids)
        .front();
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamSet& params, const ParamSet& grads) {
        if (m_.size() == 0) {
            m_ = params.zeros_like();
            v_ = params.zeros_like();
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params.entry(k).second.data();
            const auto g = grads.entry(k).second.data();
            auto m = m_.entry(k).second.data();
            auto v = v_.entry(k).second.data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            }
        }
    }

    long steps() const noexcept { return t_; }
    double lr() const noexcept { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    AdamConfig cfg_;
    ParamSet m_;
    ParamSet v_;
    long t_ = 0;
};

/// Exponential moving average of weights.
class Ema {
public:
    Ema(const ParamSet& init, double decay) : decay_(decay), shadow_(init) {}

    void update(const ParamSet& params) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto s = shadow_.entry(k).second.data();
            const auto p = params.entry(k).second.data();
            for (std::size_t i = 0; i < s.size(); ++i) {
                s[i] = decay_ * s[i] + (1.0 - decay_) * p[i];
            }
        }
    }

    const ParamSet& params() const noexcept { return shadow_; }

private:
    double decay_;
    ParamSet shadow_;
};

} // namespace tfm
