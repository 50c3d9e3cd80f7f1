#pragma once

// Velocity-head network v(x, t) for the Flow Matching baseline. Same MLP
// stack, initialization and embeddings as the transition model; conditioned
// on t only.

#include <optional>

#include "tfm/nets.hpp"

namespace tfm {

struct FmModel {
    ModelConfig config;
    ParamSet params;

    static FmModel create(ModelConfig cfg, Rng& rng, InitScheme scheme = InitScheme::Standard) {
        cfg.kind = ModelKind::FM;
        ParamSet p = init_params(cfg, rng, scheme);
        return {std::move(cfg), std::move(p)};
    }
};

template <class P, class In>
auto velocity_apply(const ModelConfig& cfg, const P& params, const In& x, const In& t, const ClassIds& classes) {
    using nets_detail::value_of;
    const Tensor& xv = value_of(x);
    const Tensor& tv = value_of(t);
    if (xv.rank() != 2 || tv.rank() != 2 || tv.cols() != 1 || tv.rows() != xv.rows()) {
        throw ShapeError("velocity forward expects x [n x d] and t [n x 1]");
    }
    nets_detail::check_data_dim(cfg, xv);
    for (std::size_t i = 0; i < tv.size(); ++i) {
        if (!(tv[i] >= 0.0 && tv[i] <= 1.0)) {
            throw ContractError("velocity forward requires t in [0, 1], got " + std::to_string(tv[i]));
        }
    }
    const In features = ad::concat_cols(x, embed_times(t, cfg.time));
    return mlp_apply(cfg, params, features, class_rows(cfg, classes, xv.rows()));
}

inline Tensor fm_forward(const FmModel& m, const Tensor& x, const Tensor& t, const ClassIds& classes = {}) {
    return velocity_apply(m.config, m.params, x, t, classes);
}

inline Tensor fm_forward(const FmModel& m, const Tensor& x, double t, const ClassIds& classes = {}) {
    const Tensor xm = x.as_matrix();
    Tensor out = fm_forward(m, xm, column(xm.rows(), t), classes);
    return x.rank() == 1 ? out.reshaped(x.shape()) : out;
}

inline Tensor fm_forward(const FmModel& m, const Tensor& x, double t, std::optional<int> class_id) {
    ClassIds ids;
    if (class_id) {
        ids.push_back(*class_id);
    }
    return fm_forward(m, x, t, ids);
}

inline Var fm_forward_var(const ModelConfig& cfg, const VarSet& vars, const Tensor& x, const Tensor& t,
                          const ClassIds& classes = {}) {
    return velocity_apply(cfg, vars, x, t, classes);
}

} // namespace tfm
