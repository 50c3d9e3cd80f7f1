#pragma once

// Invariant suites behind `tfm check`. Each check builds its own small
// problem from a seed and compares against an oracle that does not share the
// code path under test (finite differences, closed forms, exact replays).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfm/objectives.hpp"
#include "tfm/oracles.hpp"
#include "tfm/sampling.hpp"

namespace tfm {

enum class CheckSuite { JVP, GRAD, THEOREM2, IDENTITY, SAMPLER };

inline constexpr CheckSuite kAllSuites[] = {CheckSuite::JVP, CheckSuite::GRAD, CheckSuite::THEOREM2,
                                            CheckSuite::IDENTITY, CheckSuite::SAMPLER};

inline std::string suite_name(CheckSuite s) {
    switch (s) {
    case CheckSuite::JVP:
        return "JVP";
    case CheckSuite::GRAD:
        return "GRAD";
    case CheckSuite::THEOREM2:
        return "THEOREM2";
    case CheckSuite::IDENTITY:
        return "IDENTITY";
    case CheckSuite::SAMPLER:
        return "SAMPLER";
    }
    return "?";
}

inline CheckSuite parse_suite(const std::string& text) {
    std::string up = text;
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    for (CheckSuite s : kAllSuites) {
        if (suite_name(s) == up) {
            return s;
        }
    }
    throw ValidationError("suite", "unknown suite '" + text + "' (expected JVP, GRAD, THEOREM2, IDENTITY or SAMPLER)");
}

/// One measured quantity against its tolerance.
struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;
    /// Human-readable acceptance rule, e.g. "< 1e-6".
    std::string rule;
    double seconds = 0.0;
};

struct SuiteReport {
    CheckSuite suite = CheckSuite::JVP;
    std::uint64_t seed = 0;
    std::vector<CheckResult> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
};

inline nlohmann::json to_json(const CheckResult& c) {
    return {{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"rule", c.rule}, {"seconds", c.seconds}};
}

inline nlohmann::json to_json(const SuiteReport& r) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks) {
        checks.push_back(to_json(c));
    }
    return {{"suite", suite_name(r.suite)}, {"seed", r.seed}, {"passed", r.passed()}, {"checks", checks}};
}

namespace checks_detail {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline CheckResult below(std::string name, double value, double limit, const Stopwatch& sw) {
    char rule[64];
    std::snprintf(rule, sizeof rule, "< %g", limit);
    return {std::move(name), value < limit, value, rule, sw.seconds()};
}

inline CheckResult above(std::string name, double value, double limit, const Stopwatch& sw) {
    char rule[64];
    std::snprintf(rule, sizeof rule, "> %g", limit);
    return {std::move(name), value > limit, value, rule, sw.seconds()};
}

inline CheckResult near(std::string name, double value, double target, double tol, const Stopwatch& sw) {
    char rule[64];
    std::snprintf(rule, sizeof rule, "%g +- %g", target, tol);
    return {std::move(name), std::abs(value - target) <= tol, value, rule, sw.seconds()};
}

inline CheckResult exact(std::string name, bool ok, const Stopwatch& sw) {
    return {std::move(name), ok, ok ? 1.0 : 0.0, "exact", sw.seconds()};
}

inline Tensor gaussian(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.storage()) {
        v = scale * rng.normal();
    }
    return t;
}

} // namespace checks_detail

/// Central finite-difference gradient of a scalar function of a parameter set.
inline ParamSet fd_gradient(const std::function<double(const ParamSet&)>& loss, const ParamSet& params, double h) {
    ParamSet out = params.zeros_like();
    ParamSet probe = params;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = probe.entry(k).second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double up = loss(probe);
            p[i] = saved - h;
            const double down = loss(probe);
            p[i] = saved;
            out.entry(k).second[i] = (up - down) / (2.0 * h);
        }
    }
    return out;
}

/// Largest |a - b| / max(|b|, floor) over two gradient sets with identical layout.
inline double max_relative_error(const ParamSet& got, const ParamSet& reference, double floor) {
    double worst = 0.0;
    for (std::size_t k = 0; k < got.size(); ++k) {
        const Tensor& g = got.entry(k).second;
        const Tensor& r = reference.entry(k).second;
        for (std::size_t i = 0; i < g.size(); ++i) {
            worst = std::max(worst, std::abs(g[i] - r[i]) / std::max(std::abs(r[i]), floor));
        }
    }
    return worst;
}

/// TFM loss with the regression target and adaptive weights computed once at
/// `model.params` and then held fixed. Its finite-difference gradient is the
/// reference for the stop-gradient implementation.
struct FrozenTfmLoss {
    ModelConfig config;
    Tensor xt;
    Tensor t;
    Tensor r;
    Tensor target;
    Tensor weights;

    FrozenTfmLoss(const TfmModel& model, const CouplingBatch& batch, std::span<const TimePair> pairs,
                  const LossConfig& cfg)
        : config(model.config) {
        const std::size_t n = batch.size();
        t = Tensor(Shape{n, 1});
        r = Tensor(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = pairs[i].t;
            r[i] = pairs[i].r;
        }
        xt = interpolate_rows(batch.x0, batch.x1, t);
        target = tfm_target(model, xt, t, r, ad::sub(batch.x1, batch.x0), interpolate_rows(batch.x0, batch.x1, r));
        const Tensor out = forward(model, xt, t, r);
        weights = Tensor(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            weights[i] = adaptive_weight(squared_row_error(out, i), cfg);
        }
    }

    double operator()(const ParamSet& params) const {
        const Tensor out = transition_apply(config, params, xt, t, r, ClassIds{});
        double total = 0.0;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            total += weights[i] * squared_row_error(out, i);
        }
        return total / static_cast<double>(out.rows());
    }

private:
    double squared_row_error(const Tensor& out, std::size_t i) const {
        double sq = 0.0;
        for (std::size_t c = 0; c < out.cols(); ++c) {
            sq += (out(i, c) - target(i, c)) * (out(i, c) - target(i, c));
        }
        return sq;
    }
};

// JVP of random transition networks along random tangents vs central
// differences with step 1e-5.
inline CheckResult check_jvp(Rng& rng, std::size_t n_models = 50) {
    checks_detail::Stopwatch sw;
    double worst = 0.0;
    for (std::size_t k = 0; k < n_models; ++k) {
        ModelConfig cfg;
        cfg.data_dim = 1 + rng.index(3);
        cfg.hidden.assign(1 + rng.index(3), 0);
        for (auto& h : cfg.hidden) {
            h = 4 + rng.index(29);
        }
        cfg.time.dim = 2 * (1 + rng.index(4));
        cfg.activation = rng.index(2) == 0 ? Activation::SILU : Activation::TANH;
        cfg.cond = static_cast<ConditioningMode>(rng.index(4));
        cfg.param = rng.index(2) == 0 ? ParamMode::RESIDUAL : ParamMode::DIRECT;
        const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
        const std::size_t n = 4;
        const Tensor x = checks_detail::gaussian({n, cfg.data_dim}, rng);
        Tensor t(Shape{n, 1});
        Tensor r(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            const TimePair p = time_pair_from(rng.uniform(0.05, 0.9), rng.uniform());
            t[i] = p.t;
            r[i] = p.r;
        }
        const Tensor tx = checks_detail::gaussian({n, cfg.data_dim}, rng);
        const Tensor tt = checks_detail::gaussian({n, 1}, rng);
        const Tensor tr = checks_detail::gaussian({n, 1}, rng);
        auto f = [&](const auto& xi, const auto& ti, const auto& ri) {
            return transition_apply(m.config, m.params, xi, ti, ri, ClassIds{});
        };
        worst = std::max(worst, ad::check_jvp_fd(f, x, t, r, tx, tt, tr, 1e-5));
    }
    return checks_detail::below("jvp_vs_finite_differences", worst, 1e-6, sw);
}

// Parameter gradient of tfm_loss on a 2-16-16-2 model vs finite differences
// of the loss with the target frozen.
inline CheckResult check_grad(Rng& rng) {
    checks_detail::Stopwatch sw;
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 4;
    double worst = 0.0;
    for (double p : {0.0, 1.0}) {
        const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
        const std::size_t n = 8;
        const CouplingBatch batch{checks_detail::gaussian({n, 2}, rng), checks_detail::gaussian({n, 2}, rng, 2.0), {}};
        std::vector<TimePair> pairs;
        for (std::size_t i = 0; i < n; ++i) {
            pairs.push_back(sample_time_pair(TimeSamplerConfig{}, rng));
        }
        LossConfig loss;
        loss.power_p = p;
        const LossResult res = tfm_loss(m, batch, pairs, loss, rng);
        const FrozenTfmLoss frozen(m, batch, pairs, loss);
        const ParamSet fd = fd_gradient(std::cref(frozen), m.params, 1e-5);
        worst = std::max(worst, max_relative_error(res.grads, fd, 1e-6));
    }
    return checks_detail::below("tfm_loss_gradient_vs_finite_differences", worst, 1e-4, sw);
}

inline std::vector<CheckResult> check_grad_equivalence(Rng& rng, std::size_t n_two_atom = 100000) {
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 4;
    std::vector<CheckResult> out;
    {
        checks_detail::Stopwatch sw;
        const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
        const AtomTarget one = AtomTarget::uniform(Tensor::matrix(1, 2, {1.0, -0.5}));
        out.push_back(checks_detail::near("single_atom_gradient_cosine",
                                          grad_equivalence_check(m, one, 2000, TimeSamplerConfig{}, rng), 1.0, 1e-12,
                                          sw));
    }
    {
        checks_detail::Stopwatch sw;
        const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
        const AtomTarget two = AtomTarget::uniform(Tensor::matrix(2, 2, {1.0, 1.0, -1.0, 0.5}));
        out.push_back(checks_detail::above("two_atom_gradient_cosine",
                                           grad_equivalence_check(m, two, n_two_atom, TimeSamplerConfig{}, rng), 0.99,
                                           sw));
    }
    return out;
}

/// Mean and diagonal identity residuals of a transition model trained on one
/// coupling (x0, x1) until it reproduces it.
struct IdentityGrid {
    double mean_residual = 0.0;
    double max_diagonal = 0.0;
    double final_mse = 0.0;
};

inline IdentityGrid overfit_identity_grid(Rng& rng, std::size_t steps = 2000) {
    ModelConfig cfg;
    cfg.hidden = {64, 64};
    cfg.time.dim = 8;
    TfmModel m = TfmModel::create(cfg, rng);
    const Tensor x0 = Tensor::vector({-0.8, 0.5});
    const Tensor x1 = Tensor::vector({1.2, 0.9});
    const std::size_t n = 32;
    CouplingBatch batch{Tensor(Shape{n, 2}), Tensor(Shape{n, 2}), {}};
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x0.storage().begin(), x0.storage().end(), batch.x0.row(i).begin());
        std::copy(x1.storage().begin(), x1.storage().end(), batch.x1.row(i).begin());
    }
    const double lr = 5e-3;
    Adam adam(AdamConfig{lr});
    IdentityGrid out;
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<TimePair> pairs;
        for (std::size_t i = 0; i < n; ++i) {
            pairs.push_back(time_pair_from(rng.uniform(), rng.uniform()));
        }
        adam.set_lr(lr * (1.0 - static_cast<double>(step) / static_cast<double>(steps)));
        const LossResult res = tfm_loss(m, batch, pairs, LossConfig{}, rng);
        out.final_mse = res.report.raw_mse;
        adam.step(m.params, res.grads);
    }
    // 10 x 10 grid: t = i/10, r = t + (1 - t) j/9, so j = 0 is the diagonal.
    const Tensor v = ad::sub(x1, x0);
    double total = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double t = i / 10.0;
        const Tensor xt = interpolate(x0, x1, t);
        for (int j = 0; j < 10; ++j) {
            const double r = j == 0 ? t : std::min(1.0, t + (1.0 - t) * j / 9.0);
            const double res = identity_residual(m, xt, TimePair(t, r), conditional_transition(x0, x1, r), v);
            total += res;
            if (j == 0) {
                out.max_diagonal = std::max(out.max_diagonal, res);
            }
        }
    }
    out.mean_residual = total / 100.0;
    return out;
}

inline std::vector<CheckResult> check_identity(Rng& rng) {
    checks_detail::Stopwatch sw;
    const IdentityGrid g = overfit_identity_grid(rng);
    return {checks_detail::below("identity_residual_grid_mean", g.mean_residual, 1e-2, sw),
            checks_detail::exact("identity_residual_diagonal_zero", g.max_diagonal == 0.0, sw)};
}

/// RK4 on the closed-form marginal velocity (m = 0, s = 1) from 0 to 0.5 at x = 1.
struct GaussianFlowCheck {
    double value_100 = 0.0;
    /// err(16 steps) / err(32 steps); 16 for a fourth-order method.
    double halving_ratio = 0.0;
};

inline GaussianFlowCheck gaussian_flow_check() {
    const GaussianPair gp{Tensor::vector({0.0}), 1.0};
    const VelocityField v = [&](const Tensor& x, double t) { return gaussian_marginal_velocity(x, t, gp); };
    const Tensor x = Tensor::matrix(1, 1, {1.0});
    const double exact = gaussian_flow_map(x, 0.0, 0.5, gp)[0];
    const double e16 = std::abs(integrate_flow_map(v, x, 0.0, 0.5, 16)[0] - exact);
    const double e32 = std::abs(integrate_flow_map(v, x, 0.0, 0.5, 32)[0] - exact);
    return {integrate_flow_map(v, x, 0.0, 0.5, 100)[0], e16 / e32};
}

inline std::vector<CheckResult> check_sampler(Rng& rng) {
    using checks_detail::exact;
    std::vector<CheckResult> out;
    checks_detail::Stopwatch sw;
    ModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.time.dim = 4;
    cfg.n_classes = 3;
    const TfmModel m = TfmModel::create(cfg, rng, InitScheme::Random);
    const Tensor x0 = checks_detail::gaussian({16, 2}, rng);
    const ClassIds classes(16, 1);

    out.push_back(exact("one_step_equals_grid_0_1",
                        sample_onestep(m, x0, classes) ==
                            sample_multistep(m, x0, TimeGrid::parse("0,1"), classes).samples,
                        sw));
    const TimeGrid grid = TimeGrid::parse("0,0.2,0.7,1");
    out.push_back(exact("model_calls_equal_intervals", sample_multistep(m, x0, grid, classes).model_calls == 3, sw));
    out.push_back(exact("cfg_doubles_model_calls", sample_multistep(m, x0, grid, classes, 3.0).model_calls == 6, sw));
    out.push_back(exact("cfg_scale_one_is_conditional",
                        cfg_forward(m, x0, 0.2, 0.7, classes, 1.0) == forward(m, x0, 0.2, 0.7, classes), sw));
    out.push_back(exact("cfg_scale_zero_is_unconditional",
                        cfg_forward(m, x0, 0.2, 0.7, classes, 0.0) == forward(m, x0, 0.2, 0.7, ClassIds{}), sw));
    out.push_back(exact("sampling_is_deterministic",
                        sample_multistep(m, x0, grid, classes, 3.0).samples ==
                            sample_multistep(m, x0, grid, classes, 3.0).samples,
                        sw));

    checks_detail::Stopwatch sw_flow;
    const GaussianFlowCheck g = gaussian_flow_check();
    out.push_back(checks_detail::near("gaussian_flow_map_rk4_100", g.value_100, 0.70711, 1e-5, sw_flow));
    CheckResult ratio{"rk4_step_halving_ratio", g.halving_ratio > 14.0 && g.halving_ratio < 18.0, g.halving_ratio,
                      "in (14, 18)", sw_flow.seconds()};
    out.push_back(ratio);
    return out;
}

inline SuiteReport run_check(CheckSuite suite, std::uint64_t seed) {
    Rng rng(seed);
    SuiteReport rep{suite, seed, {}};
    switch (suite) {
    case CheckSuite::JVP:
        rep.checks.push_back(check_jvp(rng));
        break;
    case CheckSuite::GRAD:
        rep.checks.push_back(check_grad(rng));
        break;
    case CheckSuite::THEOREM2:
        rep.checks = check_grad_equivalence(rng);
        break;
    case CheckSuite::IDENTITY:
        rep.checks = check_identity(rng);
        break;
    case CheckSuite::SAMPLER:
        rep.checks = check_sampler(rng);
        break;
    }
    return rep;
}

} // namespace tfm
