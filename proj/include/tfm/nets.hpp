#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfm/autodiff.hpp"
#include "tfm/rng.hpp"

namespace tfm {

using ad::DualTensor;
using ad::ParamSet;
using ad::Var;
using ad::VarSet;

enum class ConditioningMode { T_R, T_DT, T_R_DT, DT_ONLY };
enum class ParamMode { DIRECT, RESIDUAL };
enum class Activation { SILU, TANH };
enum class ModelKind { TFM, FM };

struct TimeEmbedConfig {
    std::size_t dim = 32;
    double max_period = 1e4;

    void validate() const {
        if (dim == 0 || dim % 2 != 0) {
            throw ContractError("time embedding dim must be even and positive, got " + std::to_string(dim));
        }
        if (!(max_period > 0.0)) {
            throw ContractError("time embedding max_period must be positive");
        }
    }

    bool operator==(const TimeEmbedConfig&) const = default;
};

/// Architecture and conditioning metadata shared by transition-flow and
/// velocity (baseline) networks.
struct ModelConfig {
    ModelKind kind = ModelKind::TFM;
    std::size_t data_dim = 2;
    std::vector<std::size_t> hidden{256, 256, 256, 256};
    TimeEmbedConfig time{};
    ConditioningMode cond = ConditioningMode::T_DT;
    ParamMode param = ParamMode::RESIDUAL;
    Activation activation = Activation::SILU;
    std::size_t n_classes = 0;

    std::size_t embed_count() const {
        if (kind == ModelKind::FM) {
            return 1;
        }
        switch (cond) {
        case ConditioningMode::T_R:
        case ConditioningMode::T_DT:
            return 2;
        case ConditioningMode::T_R_DT:
            return 3;
        case ConditioningMode::DT_ONLY:
            return 1;
        }
        return 0;
    }

    std::size_t input_dim() const { return data_dim + embed_count() * time.dim; }

    void validate() const {
        time.validate();
        if (data_dim == 0) {
            throw ContractError("model data_dim must be positive");
        }
        if (hidden.empty()) {
            throw ContractError("model needs at least one hidden layer");
        }
        for (std::size_t h : hidden) {
            if (h == 0) {
                throw ContractError("hidden layer sizes must be positive");
            }
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr int kNullClass = -1;

/// Per-row class ids; `kNullClass` selects the null (unconditional) row.
using ClassIds = std::vector<int>;

enum class InitScheme {
    /// Uniform fan-in scaling with a zero output layer.
    Standard,
    /// Uniform fan-in scaling everywhere, including the output layer.
    Random,
};

namespace nets_detail {

inline std::string weight_name(std::size_t layer) { return "fc" + std::to_string(layer) + ".weight"; }
inline std::string bias_name(std::size_t layer) { return "fc" + std::to_string(layer) + ".bias"; }

inline const Tensor& param(const ParamSet& p, const std::string& name) { return p.at(name); }
inline Var param(const VarSet& v, const std::string& name) { return v[name]; }

inline Tensor gather(const Tensor& table, const std::vector<std::size_t>& rows) { return ad::gather_rows(table, rows); }
inline Var gather(Var table, const std::vector<std::size_t>& rows) { return ad::gather_rows(table, rows); }

template <class T>
T activate(Activation act, const T& h) {
    return act == Activation::TANH ? ad::tanh(h) : ad::silu(h);
}

inline Tensor frequencies(const TimeEmbedConfig& cfg) {
    const std::size_t half = cfg.dim / 2;
    Tensor f(Shape{1, half});
    for (std::size_t k = 0; k < half; ++k) {
        f[k] = 1.0 / std::pow(cfg.max_period, static_cast<double>(2 * k) / static_cast<double>(cfg.dim));
    }
    return f;
}

} // namespace nets_detail

/// Sinusoidal embedding of a column of times `[n x 1] -> [n x dim]`.
/// Column 2k holds sin(s / max_period^(2k/dim)), column 2k+1 the cosine.
template <class T>
T embed_times(const T& s, const TimeEmbedConfig& cfg) {
    const T arg = ad::matmul(s, nets_detail::frequencies(cfg));
    return ad::interleave_cols(ad::sin(arg), ad::cos(arg));
}

/// Single-scalar embedding.
inline Tensor time_embed(double s, const TimeEmbedConfig& cfg) {
    cfg.validate();
    return embed_times(column(1, s), cfg).reshaped({cfg.dim});
}

/// Time features fed to the network, chosen by conditioning mode.
template <class T>
T time_features(const ModelConfig& cfg, const T& t, const T& r) {
    if (cfg.kind == ModelKind::FM) {
        return embed_times(t, cfg.time);
    }
    switch (cfg.cond) {
    case ConditioningMode::T_R:
        return ad::concat_cols(embed_times(t, cfg.time), embed_times(r, cfg.time));
    case ConditioningMode::T_DT:
        return ad::concat_cols(embed_times(t, cfg.time), embed_times(ad::sub(r, t), cfg.time));
    case ConditioningMode::T_R_DT:
        return ad::concat_cols(ad::concat_cols(embed_times(t, cfg.time), embed_times(r, cfg.time)),
                               embed_times(ad::sub(r, t), cfg.time));
    case ConditioningMode::DT_ONLY:
        return embed_times(ad::sub(r, t), cfg.time);
    }
    throw ContractError("unknown conditioning mode");
}

/// The MLP body: features -> hidden stack -> data_dim.
///
/// `P` is ParamSet (plain or forward-mode evaluation) or VarSet (taped);
/// `In` is Tensor or DualTensor.
template <class P, class In>
auto mlp_apply(const ModelConfig& cfg, const P& params, const In& features, const std::vector<std::size_t>& class_rows) {
    using nets_detail::bias_name;
    using nets_detail::param;
    using nets_detail::weight_name;
    auto h = ad::add_row(ad::matmul(features, param(params, weight_name(0))), param(params, bias_name(0)));
    if (cfg.n_classes > 0) {
        h = ad::add(h, nets_detail::gather(param(params, "class_embed"), class_rows));
    }
    h = nets_detail::activate(cfg.activation, h);
    for (std::size_t layer = 1; layer < cfg.hidden.size(); ++layer) {
        h = ad::add_row(ad::matmul(h, param(params, weight_name(layer))), param(params, bias_name(layer)));
        h = nets_detail::activate(cfg.activation, h);
    }
    const std::size_t last = cfg.hidden.size();
    return ad::add_row(ad::matmul(h, param(params, weight_name(last))), param(params, bias_name(last)));
}

/// Fresh parameters for `cfg`. Weights and biases are uniform in
/// +-sqrt(1/fan_in); the output layer is zero under InitScheme::Standard.
inline ParamSet init_params(const ModelConfig& cfg, Rng& rng, InitScheme scheme = InitScheme::Standard) {
    cfg.validate();
    ParamSet params;
    std::vector<std::size_t> sizes;
    sizes.push_back(cfg.input_dim());
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(cfg.data_dim);
    for (std::size_t layer = 0; layer + 1 < sizes.size(); ++layer) {
        const std::size_t fan_in = sizes[layer];
        const std::size_t fan_out = sizes[layer + 1];
        const bool output = layer + 2 == sizes.size();
        const double bound = (output && scheme == InitScheme::Standard) ? 0.0 : std::sqrt(1.0 / static_cast<double>(fan_in));
        Tensor w(Shape{fan_in, fan_out});
        Tensor b(Shape{fan_out});
        for (double& v : w.storage()) {
            v = rng.uniform(-bound, bound);
        }
        for (double& v : b.storage()) {
            v = rng.uniform(-bound, bound);
        }
        params.add(nets_detail::weight_name(layer), std::move(w));
        params.add(nets_detail::bias_name(layer), std::move(b));
    }
    if (cfg.n_classes > 0) {
        // Last row is the learned null class.
        Tensor table(Shape{cfg.n_classes + 1, cfg.hidden.front()});
        for (double& v : table.storage()) {
            v = rng.uniform(-1.0, 1.0);
        }
        params.add("class_embed", std::move(table));
    }
    return params;
}

/// Maps class ids to embedding rows, validating ranges. An empty id list
/// means "all null class".
inline std::vector<std::size_t> class_rows(const ModelConfig& cfg, const ClassIds& ids, std::size_t n) {
    std::vector<std::size_t> rows(n, cfg.n_classes);
    if (ids.empty()) {
        return rows;
    }
    if (ids.size() != n) {
        throw ShapeError("class id count " + std::to_string(ids.size()) + " does not match batch " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (ids[i] == kNullClass) {
            continue;
        }
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.n_classes) {
            throw IndexError("class id " + std::to_string(ids[i]) + " out of range for " +
                             std::to_string(cfg.n_classes) + " classes");
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    return rows;
}

/// Parameterized transition flow X(x_t, t, r | class).
struct TfmModel {
    ModelConfig config;
    ParamSet params;

    static TfmModel create(ModelConfig cfg, Rng& rng, InitScheme scheme = InitScheme::Standard) {
        cfg.kind = ModelKind::TFM;
        ParamSet p = init_params(cfg, rng, scheme);
        return {std::move(cfg), std::move(p)};
    }
};

namespace nets_detail {

inline void check_times(const Tensor& x, const Tensor& t, const Tensor& r) {
    if (x.rank() != 2 || t.rank() != 2 || r.rank() != 2 || t.cols() != 1 || r.cols() != 1 || t.rows() != x.rows() ||
        r.rows() != x.rows()) {
        throw ShapeError("forward expects x [n x d] and t, r [n x 1]; got " + shape_str(x.shape()) + ", " +
                         shape_str(t.shape()) + ", " + shape_str(r.shape()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] > r[i]) {
            throw ContractError("transition requires t <= r, got t=" + std::to_string(t[i]) + " r=" +
                                std::to_string(r[i]));
        }
    }
}

inline void check_data_dim(const ModelConfig& cfg, const Tensor& x) {
    if (x.cols() != cfg.data_dim) {
        throw ShapeError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(cfg.data_dim));
    }
}

inline const Tensor& value_of(const Tensor& t) { return t; }
inline const Tensor& value_of(const DualTensor& t) { return t.value; }

} // namespace nets_detail

/// Generic transition map over (ParamSet | VarSet) x (Tensor | DualTensor).
template <class P, class In>
auto transition_apply(const ModelConfig& cfg, const P& params, const In& x, const In& t, const In& r,
                      const ClassIds& classes) {
    using nets_detail::value_of;
    nets_detail::check_times(value_of(x), value_of(t), value_of(r));
    nets_detail::check_data_dim(cfg, value_of(x));
    const auto rows = class_rows(cfg, classes, value_of(x).rows());
    const In features = ad::concat_cols(x, time_features(cfg, t, r));
    auto net = mlp_apply(cfg, params, features, rows);
    if (cfg.param == ParamMode::DIRECT) {
        return net;
    }
    return ad::add(x, ad::mul_rows(net, ad::sub(r, t)));
}

/// Batched forward: x `[n x d]`, t and r `[n x 1]`.
inline Tensor forward(const TfmModel& m, const Tensor& x, const Tensor& t, const Tensor& r, const ClassIds& classes = {}) {
    return transition_apply(m.config, m.params, x, t, r, classes);
}

/// Whole batch at a single (t, r).
inline Tensor forward(const TfmModel& m, const Tensor& x, double t, double r, const ClassIds& classes = {}) {
    const Tensor xm = x.as_matrix();
    Tensor out = forward(m, xm, column(xm.rows(), t), column(xm.rows(), r), classes);
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

/// Single point `[d]` with an optional class; absent selects the null row.
inline Tensor forward(const TfmModel& m, const Tensor& x, double t, double r, std::optional<int> class_id) {
    ClassIds ids;
    if (class_id) {
        ids.push_back(*class_id);
    }
    return forward(m, x, t, r, ids);
}

inline DualTensor forward_dual(const TfmModel& m, const DualTensor& x, const DualTensor& t, const DualTensor& r,
                               const ClassIds& classes = {}) {
    return transition_apply(m.config, m.params, x, t, r, classes);
}

/// Taped forward with parameters taken from `vars`; inputs are constants.
inline Var forward_var(const ModelConfig& cfg, const VarSet& vars, const Tensor& x, const Tensor& t, const Tensor& r,
                       const ClassIds& classes = {}) {
    return transition_apply(cfg, vars, x, t, r, classes);
}

/// Output of the MLP body alone; in RESIDUAL mode this is the average velocity.
inline Tensor net_output(const TfmModel& m, const Tensor& x, const Tensor& t, const Tensor& r, const ClassIds& classes = {}) {
    nets_detail::check_times(x, t, r);
    const Tensor features = ad::concat_cols(x, time_features(m.config, t, r));
    return mlp_apply(m.config, m.params, features, class_rows(m.config, classes, x.rows()));
}

} // namespace tfm
