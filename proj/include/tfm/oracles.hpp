#pragma once

// Ground-truth marginal quantities for targets where the posterior over the
// coupling is available in closed form: finite atom sets (brute force) and
// Gaussian-to-Gaussian transport. Source is always N(0, I) with the linear
// interpolant x_t = (1 - t) x0 + t x1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "tfm/objectives.hpp"

namespace tfm {

/// Discrete target distribution: atoms `[k x d]` with probability weights.
struct AtomTarget {
    Tensor atoms;
    std::vector<double> weights;

    AtomTarget(Tensor atoms_, std::vector<double> weights_) : atoms(std::move(atoms_)), weights(std::move(weights_)) {
        if (atoms.rank() != 2 || atoms.rows() == 0) {
            throw ContractError("atom target needs a nonempty [k x d] atom matrix");
        }
        if (weights.size() != atoms.rows()) {
            throw ShapeError("atom weight count does not match atom count");
        }
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) {
                throw ContractError("atom weights must be nonnegative");
            }
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw ContractError("atom weights must sum to 1");
        }
        if (!atoms.all_finite()) {
            throw NumericalError("atoms must be finite");
        }
    }

    static AtomTarget uniform(Tensor atoms_) {
        const std::size_t k = atoms_.rank() == 2 ? atoms_.rows() : 0;
        std::vector<double> w(k, k ? 1.0 / static_cast<double>(k) : 0.0);
        if (k > 0) {
            // Make the weights sum to exactly 1 in floating point.
            double rest = 1.0;
            for (std::size_t j = 0; j + 1 < k; ++j) {
                rest -= w[j];
            }
            w.back() = rest;
        }
        return AtomTarget(std::move(atoms_), std::move(w));
    }

    std::size_t dim() const { return atoms.cols(); }
    std::size_t count() const { return atoms.rows(); }
};

/// Source N(0, I), target N(mean, s^2 I).
struct GaussianPair {
    Tensor mean;
    double s = 1.0;

    GaussianPair(Tensor mean_, double s_) : mean(std::move(mean_)), s(s_) {
        if (!(s > 0.0)) {
            throw ContractError("gaussian target scale must be positive");
        }
    }

    /// Standard deviation of x_t (per coordinate).
    double sigma_t(double t) const { return std::sqrt((1.0 - t) * (1.0 - t) + t * t * s * s); }
};

namespace oracle_detail {

inline void check_time(double t) {
    if (!(t >= 0.0 && t < 1.0)) {
        throw ContractError("atom oracle requires t in [0, 1), got " + std::to_string(t));
    }
}

/// Posterior weights over atoms given x_t = x; log-sum-exp stabilised.
/// The Gaussian normaliser (1 - t)^-d is common to all atoms and cancels.
inline void posterior(std::span<const double> x, double t, const AtomTarget& tgt, std::vector<double>& w) {
    const std::size_t k = tgt.count();
    const std::size_t d = tgt.dim();
    w.assign(k, -std::numeric_limits<double>::infinity());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
        if (tgt.weights[j] == 0.0) {
            continue;
        }
        double sq = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double x0 = (x[c] - t * tgt.atoms(j, c)) / (1.0 - t);
            sq += x0 * x0;
        }
        w[j] = std::log(tgt.weights[j]) - 0.5 * sq;
        top = std::max(top, w[j]);
    }
    double total = 0.0;
    for (double& v : w) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : w) {
        v /= total;
    }
}

inline void check_dim(const Tensor& x, std::size_t d) {
    const Tensor m = x.as_matrix();
    if (m.cols() != d) {
        throw ShapeError("oracle input has dimension " + std::to_string(m.cols()) + ", target has " + std::to_string(d));
    }
}

} // namespace oracle_detail

inline std::vector<double> posterior_weights(const Tensor& x, double t, const AtomTarget& tgt) {
    oracle_detail::check_time(t);
    oracle_detail::check_dim(x, tgt.dim());
    std::vector<double> w;
    oracle_detail::posterior(x.data(), t, tgt, w);
    return w;
}

/// E[x1 - x0 | x_t = x] for each row of x (`[d]` or `[n x d]`), times per row in `t`.
inline Tensor marginal_velocity_atoms_rows(const Tensor& x, const Tensor& t, const AtomTarget& tgt) {
    oracle_detail::check_dim(x, tgt.dim());
    const Tensor xm = x.as_matrix();
    const std::size_t d = tgt.dim();
    Tensor out(xm.shape());
    std::vector<double> w;
    for (std::size_t i = 0; i < xm.rows(); ++i) {
        const double ti = t[t.size() == 1 ? 0 : i];
        oracle_detail::check_time(ti);
        const auto row = xm.row(i);
        oracle_detail::posterior(row, ti, tgt, w);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < tgt.count(); ++j) {
            if (w[j] == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < d; ++c) {
                const double a = tgt.atoms(j, c);
                const double x0 = (row[c] - ti * a) / (1.0 - ti);
                dst[c] += w[j] * (a - x0);
            }
        }
    }
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

/// E[(1 - r) x0 + r x1 | x_t = x], row-wise.
inline Tensor marginal_transition_atoms_rows(const Tensor& x, const Tensor& t, const Tensor& r, const AtomTarget& tgt) {
    oracle_detail::check_dim(x, tgt.dim());
    const Tensor xm = x.as_matrix();
    const std::size_t d = tgt.dim();
    Tensor out(xm.shape());
    std::vector<double> w;
    for (std::size_t i = 0; i < xm.rows(); ++i) {
        const double ti = t[t.size() == 1 ? 0 : i];
        const double ri = r[r.size() == 1 ? 0 : i];
        oracle_detail::check_time(ti);
        if (!(ri >= ti && ri <= 1.0)) {
            throw ContractError("atom oracle requires t <= r <= 1");
        }
        const auto row = xm.row(i);
        oracle_detail::posterior(row, ti, tgt, w);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < tgt.count(); ++j) {
            if (w[j] == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < d; ++c) {
                const double a = tgt.atoms(j, c);
                const double x0 = (row[c] - ti * a) / (1.0 - ti);
                dst[c] += w[j] * ((1.0 - ri) * x0 + ri * a);
            }
        }
    }
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

inline Tensor marginal_velocity_atoms(const Tensor& x, double t, const AtomTarget& tgt) {
    return marginal_velocity_atoms_rows(x, Tensor::scalar(t), tgt);
}

inline Tensor marginal_transition_atoms(const Tensor& x, double t, double r, const AtomTarget& tgt) {
    return marginal_transition_atoms_rows(x, Tensor::scalar(t), Tensor::scalar(r), tgt);
}

/// Closed-form E[x1 - x0 | x_t = x] for the Gaussian pair (every row of x).
inline Tensor gaussian_marginal_velocity(const Tensor& x, double t, const GaussianPair& gp) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ContractError("gaussian oracle requires t in [0, 1]");
    }
    const Tensor xm = x.as_matrix();
    if (xm.cols() != gp.mean.size()) {
        throw ShapeError("gaussian oracle dimension mismatch");
    }
    const double st2 = gp.sigma_t(t) * gp.sigma_t(t);
    const double k = (t * gp.s * gp.s - (1.0 - t)) / st2;
    Tensor out(xm.shape());
    for (std::size_t i = 0; i < xm.rows(); ++i) {
        for (std::size_t c = 0; c < xm.cols(); ++c) {
            const double m = gp.mean[c];
            out(i, c) = m + k * (xm(i, c) - t * m);
        }
    }
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

/// Closed-form E[(1 - r) x0 + r x1 | x_t = x] for the Gaussian pair.
inline Tensor gaussian_marginal_transition(const Tensor& x, double t, double r, const GaussianPair& gp) {
    if (!(t >= 0.0 && t <= r && r <= 1.0)) {
        throw ContractError("gaussian oracle requires 0 <= t <= r <= 1");
    }
    const Tensor xm = x.as_matrix();
    if (xm.cols() != gp.mean.size()) {
        throw ShapeError("gaussian oracle dimension mismatch");
    }
    const double st2 = gp.sigma_t(t) * gp.sigma_t(t);
    const double k0 = (1.0 - t) / st2;
    const double k1 = t * gp.s * gp.s / st2;
    Tensor out(xm.shape());
    for (std::size_t i = 0; i < xm.rows(); ++i) {
        for (std::size_t c = 0; c < xm.cols(); ++c) {
            const double m = gp.mean[c];
            const double centered = xm(i, c) - t * m;
            out(i, c) = (1.0 - r) * k0 * centered + r * (m + k1 * centered);
        }
    }
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

/// Exact solution of dx/dtau = v(x, tau) for the Gaussian pair:
/// x_r = r m + (x_t - t m) sigma_r / sigma_t.
inline Tensor gaussian_flow_map(const Tensor& x, double t, double r, const GaussianPair& gp) {
    const Tensor xm = x.as_matrix();
    const double ratio = gp.sigma_t(r) / gp.sigma_t(t);
    Tensor out(xm.shape());
    for (std::size_t i = 0; i < xm.rows(); ++i) {
        for (std::size_t c = 0; c < xm.cols(); ++c) {
            const double m = gp.mean[c];
            out(i, c) = r * m + (xm(i, c) - t * m) * ratio;
        }
    }
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

using VelocityField = std::function<Tensor(const Tensor& x, double tau)>;

/// Classical fixed-step RK4 integration of dx/dtau = v(x, tau) from t to r.
inline Tensor integrate_flow_map(const VelocityField& v, const Tensor& x, double t, double r, std::size_t n_steps) {
    if (n_steps == 0) {
        throw ContractError("integrate_flow_map needs at least one step");
    }
    if (r == t) {
        return x;
    }
    const double h = (r - t) / static_cast<double>(n_steps);
    Tensor state = x;
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double tau = t + h * static_cast<double>(k);
        const Tensor k1 = v(state, tau);
        const Tensor k2 = v(ad::add(state, ad::scale(k1, h / 2.0)), tau + h / 2.0);
        const Tensor k3 = v(ad::add(state, ad::scale(k2, h / 2.0)), tau + h / 2.0);
        const Tensor k4 = v(ad::add(state, ad::scale(k3, h)), tau + h);
        for (std::size_t i = 0; i < state.size(); ++i) {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if (!state.all_finite()) {
            throw NumericalError("integrate_flow_map: non-finite state at step " + std::to_string(k));
        }
    }
    return state;
}

struct GradEquivalenceReport {
    double cosine = 0.0;
    double norm_conditional = 0.0;
    double norm_marginal = 0.0;
    std::size_t n_samples = 0;
};

/// Monte-Carlo gradients of the conditional and marginal TFM losses (squared
/// l2, no weighting) over one shared stream of x_t, and their cosine.
inline GradEquivalenceReport grad_equivalence_report(const TfmModel& model, const AtomTarget& tgt,
                                                     std::size_t n_samples, const TimeSamplerConfig& pair_cfg, Rng& rng,
                                                     std::size_t chunk = 4096) {
    if (model.config.n_classes != 0) {
        throw UnsupportedOpError("grad_equivalence_check expects an unconditional model");
    }
    if (model.config.data_dim != tgt.dim()) {
        throw ShapeError("model and atom target dimensions differ");
    }
    if (n_samples == 0) {
        throw ContractError("grad_equivalence_check needs samples");
    }
    const std::size_t d = tgt.dim();
    ParamSet g_cond = model.params.zeros_like();
    ParamSet g_marg = model.params.zeros_like();
    std::vector<double> cumulative(tgt.count());
    std::partial_sum(tgt.weights.begin(), tgt.weights.end(), cumulative.begin());

    for (std::size_t start = 0; start < n_samples; start += chunk) {
        const std::size_t n = std::min(chunk, n_samples - start);
        Tensor x0(Shape{n, d});
        Tensor x1(Shape{n, d});
        Tensor t(Shape{n, 1});
        Tensor r(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                x0(i, c) = rng.normal();
            }
            const double u = rng.uniform();
            const std::size_t j = std::min<std::size_t>(
                static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin()),
                tgt.count() - 1);
            for (std::size_t c = 0; c < d; ++c) {
                x1(i, c) = tgt.atoms(j, c);
            }
            TimePair p = sample_time_pair(pair_cfg, rng);
            while (p.t >= 1.0 - 1e-9) {
                p = sample_time_pair(pair_cfg, rng);
            }
            t[i] = p.t;
            r[i] = p.r;
        }
        const Tensor xt = interpolate_rows(x0, x1, t);
        const Tensor target_c =
            tfm_target(model, xt, t, r, ad::sub(x1, x0), interpolate_rows(x0, x1, r));
        const Tensor target_m = tfm_target(model, xt, t, r, marginal_velocity_atoms_rows(xt, t, tgt),
                                           marginal_transition_atoms_rows(xt, t, r, tgt));

        ad::Tape tape;
        VarSet vars(tape, model.params);
        const Var pred = forward_var(model.config, vars, xt, t, r);
        auto accumulate = [&](const Tensor& target, ParamSet& into) {
            const Var loss = ad::sum(ad::square(ad::sub(pred, target)));
            tape.backward(loss);
            for (std::size_t k = 0; k < into.size(); ++k) {
                const Tensor g = tape.grad(vars.at(k));
                auto dst = into.entry(k).second.data();
                for (std::size_t i = 0; i < dst.size(); ++i) {
                    dst[i] += g[i];
                }
            }
        };
        accumulate(target_c, g_cond);
        accumulate(target_m, g_marg);
    }

    GradEquivalenceReport rep;
    rep.n_samples = n_samples;
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t k = 0; k < g_cond.size(); ++k) {
        const auto a = g_cond.entry(k).second.data();
        const auto b = g_marg.entry(k).second.data();
        for (std::size_t i = 0; i < a.size(); ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
    }
    const double scale = 1.0 / static_cast<double>(n_samples);
    rep.norm_conditional = std::sqrt(aa) * scale;
    rep.norm_marginal = std::sqrt(bb) * scale;
    if (aa == 0.0 || bb == 0.0) {
        throw NumericalError("grad_equivalence_check: zero gradient, cosine undefined");
    }
    rep.cosine = ab / std::sqrt(aa * bb);
    return rep;
}

inline double grad_equivalence_check(const TfmModel& model, const AtomTarget& tgt, std::size_t n_samples,
                                     const TimeSamplerConfig& pair_cfg, Rng& rng) {
    return grad_equivalence_report(model, tgt, n_samples, pair_cfg, rng).cosine;
}

} // namespace tfm
