#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tfm/dual.hpp"
#include "tfm/tape.hpp"

namespace tfm::ad {

/// Ordered collection of named tensors (model parameters, gradients, Adam moments).
class ParamSet {
public:
    using Entry = std::pair<std::string, Tensor>;

    void add(std::string name, Tensor value) {
        if (find(name) != nullptr) {
            throw ContractError("duplicate parameter name '" + name + "'");
        }
        entries_.emplace_back(std::move(name), std::move(value));
    }

    const Tensor* find(std::string_view name) const {
        auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
        return it == entries_.end() ? nullptr : &it->second;
    }

    Tensor* find(std::string_view name) {
        auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
        return it == entries_.end() ? nullptr : &it->second;
    }

    const Tensor& at(std::string_view name) const {
        if (const Tensor* t = find(name)) {
            return *t;
        }
        throw IndexError("no parameter named '" + std::string(name) + "'");
    }

    Tensor& at(std::string_view name) {
        if (Tensor* t = find(name)) {
            return *t;
        }
        throw IndexError("no parameter named '" + std::string(name) + "'");
    }

    std::size_t size() const noexcept { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_.at(i); }
    Entry& entry(std::size_t i) { return entries_.at(i); }

    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) {
            n += t.size();
        }
        return n;
    }

    /// Same names and shapes, all zeros.
    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& [name, t] : entries_) {
            out.add(name, Tensor::zeros_like(t));
        }
        return out;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

private:
    std::vector<Entry> entries_;
};

/// Parameters lifted onto a tape, addressable by name.
class VarSet {
public:
    VarSet(Tape& tape, const ParamSet& params) : params_(&params) {
        vars_.reserve(params.size());
        for (const auto& [_, t] : params) {
            vars_.push_back(tape.leaf(t));
        }
    }

    Var operator[](std::string_view name) const {
        for (std::size_t i = 0; i < params_->size(); ++i) {
            if (params_->entry(i).first == name) {
                return vars_[i];
            }
        }
        throw IndexError("no parameter named '" + std::string(name) + "'");
    }

    Var at(std::size_t i) const { return vars_.at(i); }
    std::size_t size() const noexcept { return vars_.size(); }

private:
    const ParamSet* params_;
    std::vector<Var> vars_;
};

template <class F>
std::pair<double, ParamSet> value_and_grad(F&& loss_fn, const ParamSet& params) {
    Tape tape;
    VarSet vars(tape, params);
    Var loss = loss_fn(vars);
    if (loss.value().size() != 1) {
        throw ContractError("grad: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    tape.backward(loss);
    ParamSet out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        out.add(params.entry(i).first, tape.grad(vars.at(i)));
    }
    return {loss.value().item(), std::move(out)};
}

/// d loss / d p for every parameter; unused parameters get zeros.
template <class F>
ParamSet grad(F&& loss_fn, const ParamSet& params) {
    return value_and_grad(std::forward<F>(loss_fn), params).second;
}

struct JvpResult {
    Tensor output;
    Tensor derivative;
};

namespace detail {
inline std::size_t batch_rows(const Tensor& x) { return x.rank() == 2 ? x.rows() : 1; }
} // namespace detail

/// Evaluates `f(x, t, r)` and its directional derivative along `(tx, tt, tr)`.
///
/// `f` must be generic over the argument type: it is invoked with
/// DualTensor arguments. `t` and `r` are `[n x 1]` columns.
template <class F>
JvpResult jvp(F&& f, const Tensor& x, const Tensor& t, const Tensor& r, const Tensor& tx, const Tensor& tt,
              const Tensor& tr) {
    DualTensor out = f(DualTensor(x, tx), DualTensor(t, tt), DualTensor(r, tr));
    return {std::move(out.value), std::move(out.tangent)};
}

/// Scalar-time overload: `t`, `r` and their tangents are broadcast to columns.
template <class F>
JvpResult jvp(F&& f, const Tensor& x, double t, double r, const Tensor& tx, double tt, double tr) {
    const std::size_t n = detail::batch_rows(x);
    return jvp(std::forward<F>(f), x, column(n, t), column(n, r), tx, column(n, tt), column(n, tr));
}

/// Max over output entries of |jvp - central difference| / (|central difference| + 1e-12).
template <class F>
double check_jvp_fd(F&& f, const Tensor& x, const Tensor& t, const Tensor& r, const Tensor& tx, const Tensor& tt,
                    const Tensor& tr, double eps) {
    if (!(eps > 0.0)) {
        throw ContractError("check_jvp_fd: eps must be positive");
    }
    const JvpResult exact = jvp(f, x, t, r, tx, tt, tr);
    auto shifted = [&](double h) {
        return Tensor(f(add(x, scale(tx, h)), add(t, scale(tt, h)), add(r, scale(tr, h))));
    };
    const Tensor plus = shifted(eps);
    const Tensor minus = shifted(-eps);
    double worst = 0.0;
    for (std::size_t i = 0; i < plus.size(); ++i) {
        const double fd = (plus[i] - minus[i]) / (2.0 * eps);
        worst = std::max(worst, std::abs(exact.derivative[i] - fd) / (std::abs(fd) + 1e-12));
    }
    return worst;
}

template <class F>
double check_jvp_fd(F&& f, const Tensor& x, double t, double r, const Tensor& tx, double tt, double tr, double eps) {
    const std::size_t n = detail::batch_rows(x);
    return check_jvp_fd(std::forward<F>(f), x, column(n, t), column(n, r), tx, column(n, tt), column(n, tr), eps);
}

} // namespace tfm::ad
