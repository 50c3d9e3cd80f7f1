#pragma once

// Reverse-mode accumulation over a recorded list of primitive operations.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tfm/ops.hpp"

namespace tfm::ad {

enum class Op {
    Leaf,
    Const,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddRow,
    MulRows,
    SumCols,
    Concat,
    Interleave,
    Gather,
    Tanh,
    Silu,
    Sin,
    Cos,
    Square,
    Sum,
    Mean,
};

class Tape;

/// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        std::size_t a = 0;
        std::size_t b = 0;
        double scalar = 0.0;
        std::vector<std::size_t> index;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(value);
        n.requires_grad = true;
        return push(std::move(n));
    }

    Var constant(Tensor value) {
        Node n;
        n.op = Op::Const;
        n.value = std::move(value);
        return push(std::move(n));
    }

    Var record(Op op, Var a, Var b = {}, double scalar = 0.0, std::vector<std::size_t> index = {}) {
        check_owner(a);
        const bool binary = is_binary(op);
        if (binary) {
            check_owner(b);
        }
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = binary ? b.id : 0;
        n.scalar = scalar;
        n.index = std::move(index);
        n.requires_grad = nodes_[a.id].requires_grad || (binary && nodes_[b.id].requires_grad);
        n.value = compute(n);
        return push(std::move(n));
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(std::size_t id) const { return nodes_.at(id); }

    /// Accumulates d(root)/d(node) into every node that requires a gradient.
    void backward(Var root) {
        check_owner(root);
        if (nodes_[root.id].value.size() != 1) {
            throw ContractError("backward: root must be scalar, got shape " + shape_str(nodes_[root.id].value.shape()));
        }
        for (auto& n : nodes_) {
            n.grad = Tensor();
        }
        nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape(), 1.0);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) {
                continue;
            }
            propagate(n);
        }
    }

    /// Gradient stored at a node after backward(); zeros if it was never reached.
    Tensor grad(Var v) const {
        check_owner(v);
        const Node& n = nodes_[v.id];
        return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
    }

    /// Recomputes every recorded node from its inputs and reports whether the
    /// result is bit-identical to the values recorded during the forward pass.
    bool replay_matches() const {
        for (const Node& n : nodes_) {
            if (n.op == Op::Leaf || n.op == Op::Const) {
                continue;
            }
            if (!(compute(n) == n.value)) {
                return false;
            }
        }
        return true;
    }

private:
    static bool is_binary(Op op) {
        switch (op) {
        case Op::MatMul:
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::AddRow:
        case Op::MulRows:
        case Op::Concat:
        case Op::Interleave:
            return true;
        default:
            return false;
        }
    }

    void check_owner(Var v) const {
        if (v.tape != this || v.id >= nodes_.size()) {
            throw ContractError("variable does not belong to this tape");
        }
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    Tensor compute(const Node& n) const {
        const Tensor& x = nodes_[n.a].value;
        switch (n.op) {
        case Op::MatMul:
            return matmul(x, nodes_[n.b].value);
        case Op::Add:
            return add(x, nodes_[n.b].value);
        case Op::Sub:
            return sub(x, nodes_[n.b].value);
        case Op::Mul:
            return mul(x, nodes_[n.b].value);
        case Op::Scale:
            return scale(x, n.scalar);
        case Op::AddRow:
            return add_row(x, nodes_[n.b].value);
        case Op::MulRows:
            return mul_rows(x, nodes_[n.b].value);
        case Op::SumCols:
            return sum_cols(x);
        case Op::Concat:
            return concat_cols(x, nodes_[n.b].value);
        case Op::Interleave:
            return interleave_cols(x, nodes_[n.b].value);
        case Op::Gather:
            return gather_rows(x, n.index);
        case Op::Tanh:
            return tanh(x);
        case Op::Silu:
            return silu(x);
        case Op::Sin:
            return sin(x);
        case Op::Cos:
            return cos(x);
        case Op::Square:
            return square(x);
        case Op::Sum:
            return sum(x);
        case Op::Mean:
            return mean(x);
        case Op::Leaf:
        case Op::Const:
            break;
        }
        throw UnsupportedOpError("tape: cannot compute leaf node");
    }

    void accumulate(std::size_t id, Tensor g) {
        Node& target = nodes_[id];
        if (!target.requires_grad) {
            return;
        }
        if (target.grad.empty()) {
            target.grad = std::move(g);
        } else {
            auto dst = target.grad.data();
            const auto src = g.data();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += src[i];
            }
        }
    }

    bool wants(std::size_t id) const { return nodes_[id].requires_grad; }

    void propagate(const Node& n) {
        const Tensor& g = n.grad;
        const Tensor& x = nodes_[n.a].value;
        switch (n.op) {
        case Op::Leaf:
        case Op::Const:
            return;
        case Op::MatMul: {
            const Tensor& w = nodes_[n.b].value;
            if (wants(n.a)) {
                accumulate(n.a, matmul_nt(g, w));
            }
            if (wants(n.b)) {
                accumulate(n.b, matmul_tn(x, g));
            }
            return;
        }
        case Op::Add:
            accumulate(n.a, g);
            accumulate(n.b, g);
            return;
        case Op::Sub:
            accumulate(n.a, g);
            if (wants(n.b)) {
                accumulate(n.b, scale(g, -1.0));
            }
            return;
        case Op::Mul:
            if (wants(n.a)) {
                accumulate(n.a, mul(g, nodes_[n.b].value));
            }
            if (wants(n.b)) {
                accumulate(n.b, mul(g, x));
            }
            return;
        case Op::Scale:
            accumulate(n.a, scale(g, n.scalar));
            return;
        case Op::AddRow:
            accumulate(n.a, g);
            if (wants(n.b)) {
                accumulate(n.b, sum_rows(g).reshaped(nodes_[n.b].value.shape()));
            }
            return;
        case Op::MulRows:
            if (wants(n.a)) {
                accumulate(n.a, mul_rows(g, nodes_[n.b].value));
            }
            if (wants(n.b)) {
                accumulate(n.b, sum_cols(mul(g, x)));
            }
            return;
        case Op::SumCols: {
            Tensor out(x.shape());
            const std::size_t m = x.cols();
            for (std::size_t i = 0; i < x.rows(); ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    out(i, j) = g[i];
                }
            }
            accumulate(n.a, std::move(out));
            return;
        }
        case Op::Concat: {
            auto [ga, gb] = split_cols(g, x.cols());
            accumulate(n.a, std::move(ga));
            accumulate(n.b, std::move(gb));
            return;
        }
        case Op::Interleave: {
            const std::size_t m = x.cols();
            Tensor ga(x.shape());
            Tensor gb(x.shape());
            for (std::size_t i = 0; i < x.rows(); ++i) {
                for (std::size_t k = 0; k < m; ++k) {
                    ga(i, k) = g(i, 2 * k);
                    gb(i, k) = g(i, 2 * k + 1);
                }
            }
            accumulate(n.a, std::move(ga));
            accumulate(n.b, std::move(gb));
            return;
        }
        case Op::Gather: {
            if (!wants(n.a)) {
                return;
            }
            Tensor out = Tensor::zeros_like(x);
            for (std::size_t i = 0; i < n.index.size(); ++i) {
                auto dst = out.row(n.index[i]);
                const auto src = g.row(i);
                for (std::size_t j = 0; j < dst.size(); ++j) {
                    dst[j] += src[j];
                }
            }
            accumulate(n.a, std::move(out));
            return;
        }
        case Op::Tanh:
            accumulate(n.a, detail::zip(n.value, g, "tanh", [](double y, double d) { return (1.0 - y * y) * d; }));
            return;
        case Op::Silu:
            accumulate(n.a, detail::zip(x, g, "silu", [](double v, double d) {
                const double s = detail::sigmoid(v);
                return (s + v * s * (1.0 - s)) * d;
            }));
            return;
        case Op::Sin:
            accumulate(n.a, detail::zip(x, g, "sin", [](double v, double d) { return std::cos(v) * d; }));
            return;
        case Op::Cos:
            accumulate(n.a, detail::zip(x, g, "cos", [](double v, double d) { return -std::sin(v) * d; }));
            return;
        case Op::Square:
            accumulate(n.a, detail::zip(x, g, "square", [](double v, double d) { return 2.0 * v * d; }));
            return;
        case Op::Sum:
            accumulate(n.a, Tensor(x.shape(), g.item()));
            return;
        case Op::Mean:
            accumulate(n.a, Tensor(x.shape(), g.item() / static_cast<double>(x.size())));
            return;
        }
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->node(id).value; }

namespace detail {
inline Var lift(const Var& like, const Tensor& t) { return like.tape->constant(t); }
} // namespace detail

// Var-valued primitives. Mixed (Tensor, Var) overloads wrap the tensor as a
// constant node on the variable's tape.

inline Var matmul(Var a, Var b) { return a.tape->record(Op::MatMul, a, b); }
inline Var matmul(const Tensor& a, Var b) { return matmul(detail::lift(b, a), b); }
inline Var matmul(Var a, const Tensor& b) { return matmul(a, detail::lift(a, b)); }

inline Var add(Var a, Var b) { return a.tape->record(Op::Add, a, b); }
inline Var add(const Tensor& a, Var b) { return add(detail::lift(b, a), b); }
inline Var add(Var a, const Tensor& b) { return add(a, detail::lift(a, b)); }

inline Var sub(Var a, Var b) { return a.tape->record(Op::Sub, a, b); }
inline Var sub(const Tensor& a, Var b) { return sub(detail::lift(b, a), b); }
inline Var sub(Var a, const Tensor& b) { return sub(a, detail::lift(a, b)); }

inline Var mul(Var a, Var b) { return a.tape->record(Op::Mul, a, b); }
inline Var mul(Var a, const Tensor& b) { return mul(a, detail::lift(a, b)); }

inline Var scale(Var a, double s) { return a.tape->record(Op::Scale, a, {}, s); }

inline Var add_row(Var a, Var bias) { return a.tape->record(Op::AddRow, a, bias); }
inline Var add_row(const Tensor& a, Var bias) { return add_row(detail::lift(bias, a), bias); }
inline Var add_row(Var a, const Tensor& bias) { return add_row(a, detail::lift(a, bias)); }

inline Var mul_rows(Var a, Var col) { return a.tape->record(Op::MulRows, a, col); }
inline Var mul_rows(Var a, const Tensor& col) { return mul_rows(a, detail::lift(a, col)); }
inline Var mul_rows(const Tensor& a, Var col) { return mul_rows(detail::lift(col, a), col); }

inline Var sum_cols(Var a) { return a.tape->record(Op::SumCols, a); }

inline Var concat_cols(Var a, Var b) { return a.tape->record(Op::Concat, a, b); }
inline Var concat_cols(Var a, const Tensor& b) { return concat_cols(a, detail::lift(a, b)); }

inline Var interleave_cols(Var a, Var b) { return a.tape->record(Op::Interleave, a, b); }

inline Var gather_rows(Var table, std::vector<std::size_t> index) {
    return table.tape->record(Op::Gather, table, {}, 0.0, std::move(index));
}

inline Var tanh(Var a) { return a.tape->record(Op::Tanh, a); }
inline Var silu(Var a) { return a.tape->record(Op::Silu, a); }
inline Var sin(Var a) { return a.tape->record(Op::Sin, a); }
inline Var cos(Var a) { return a.tape->record(Op::Cos, a); }
inline Var square(Var a) { return a.tape->record(Op::Square, a); }
inline Var sum(Var a) { return a.tape->record(Op::Sum, a); }
inline Var mean(Var a) { return a.tape->record(Op::Mean, a); }

} // namespace tfm::ad
