#pragma once

// Forward-mode differentiation by lifting each primitive to (value, tangent)
// pairs. Only directional derivatives with respect to function inputs are
// carried; weights enter as plain tensors with zero tangent.

#include <cmath>
#include <span>
#include <utility>

#include "tfm/ops.hpp"

namespace tfm::ad {

struct DualTensor {
    Tensor value;
    Tensor tangent;

    DualTensor() = default;

    DualTensor(Tensor v, Tensor t) : value(std::move(v)), tangent(std::move(t)) {
        if (value.shape() != tangent.shape()) {
            throw ShapeError("dual tensor: value " + shape_str(value.shape()) + " and tangent " +
                             shape_str(tangent.shape()) + " differ");
        }
    }

    static DualTensor constant(Tensor v) {
        Tensor zero = Tensor::zeros_like(v);
        return {std::move(v), std::move(zero)};
    }

    const Shape& shape() const noexcept { return value.shape(); }
    std::size_t rows() const { return value.rows(); }
    std::size_t cols() const { return value.cols(); }
};

inline DualTensor matmul(const DualTensor& a, const Tensor& w) { return {matmul(a.value, w), matmul(a.tangent, w)}; }

inline DualTensor matmul(const Tensor& a, const DualTensor& w) { return {matmul(a, w.value), matmul(a, w.tangent)}; }

inline DualTensor matmul(const DualTensor& a, const DualTensor& b) {
    return {matmul(a.value, b.value), add(matmul(a.tangent, b.value), matmul(a.value, b.tangent))};
}

inline DualTensor add(const DualTensor& a, const DualTensor& b) {
    return {add(a.value, b.value), add(a.tangent, b.tangent)};
}
inline DualTensor add(const DualTensor& a, const Tensor& b) { return {add(a.value, b), a.tangent}; }
inline DualTensor add(const Tensor& a, const DualTensor& b) { return {add(a, b.value), b.tangent}; }

inline DualTensor sub(const DualTensor& a, const DualTensor& b) {
    return {sub(a.value, b.value), sub(a.tangent, b.tangent)};
}
inline DualTensor sub(const DualTensor& a, const Tensor& b) { return {sub(a.value, b), a.tangent}; }
inline DualTensor sub(const Tensor& a, const DualTensor& b) { return {sub(a, b.value), scale(b.tangent, -1.0)}; }

inline DualTensor mul(const DualTensor& a, const DualTensor& b) {
    return {mul(a.value, b.value), add(mul(a.tangent, b.value), mul(a.value, b.tangent))};
}
inline DualTensor mul(const DualTensor& a, const Tensor& b) { return {mul(a.value, b), mul(a.tangent, b)}; }

inline DualTensor scale(const DualTensor& a, double s) { return {scale(a.value, s), scale(a.tangent, s)}; }

inline DualTensor add_row(const DualTensor& a, const Tensor& bias) { return {add_row(a.value, bias), a.tangent}; }
inline DualTensor add_row(const DualTensor& a, const DualTensor& bias) {
    return {add_row(a.value, bias.value), add_row(a.tangent, bias.tangent)};
}

inline DualTensor mul_rows(const DualTensor& a, const DualTensor& col) {
    return {mul_rows(a.value, col.value), add(mul_rows(a.tangent, col.value), mul_rows(a.value, col.tangent))};
}
inline DualTensor mul_rows(const DualTensor& a, const Tensor& col) {
    return {mul_rows(a.value, col), mul_rows(a.tangent, col)};
}
inline DualTensor mul_rows(const Tensor& a, const DualTensor& col) {
    return {mul_rows(a, col.value), mul_rows(a, col.tangent)};
}

inline DualTensor sum_cols(const DualTensor& a) { return {sum_cols(a.value), sum_cols(a.tangent)}; }

inline DualTensor concat_cols(const DualTensor& a, const DualTensor& b) {
    return {concat_cols(a.value, b.value), concat_cols(a.tangent, b.tangent)};
}
inline DualTensor concat_cols(const DualTensor& a, const Tensor& b) {
    return {concat_cols(a.value, b), concat_cols(a.tangent, Tensor::zeros_like(b))};
}

inline DualTensor interleave_cols(const DualTensor& a, const DualTensor& b) {
    return {interleave_cols(a.value, b.value), interleave_cols(a.tangent, b.tangent)};
}

inline DualTensor tanh(const DualTensor& a) {
    Tensor y = tanh(a.value);
    Tensor dy = detail::zip(y, a.tangent, "tanh", [](double v, double t) { return (1.0 - v * v) * t; });
    return {std::move(y), std::move(dy)};
}

inline DualTensor silu(const DualTensor& a) {
    Tensor y(a.value.shape());
    Tensor dy(a.value.shape());
    const auto x = a.value.data();
    const auto tx = a.tangent.data();
    auto yv = y.data();
    auto dv = dy.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = detail::sigmoid(x[i]);
        yv[i] = x[i] * s;
        dv[i] = (s + x[i] * s * (1.0 - s)) * tx[i];
    }
    return {std::move(y), std::move(dy)};
}

inline DualTensor sin(const DualTensor& a) {
    return {sin(a.value), detail::zip(a.value, a.tangent, "sin", [](double x, double t) { return std::cos(x) * t; })};
}

inline DualTensor cos(const DualTensor& a) {
    return {cos(a.value), detail::zip(a.value, a.tangent, "cos", [](double x, double t) { return -std::sin(x) * t; })};
}

inline DualTensor square(const DualTensor& a) {
    return {square(a.value), detail::zip(a.value, a.tangent, "square", [](double x, double t) { return 2.0 * x * t; })};
}

inline DualTensor sum(const DualTensor& a) { return {sum(a.value), sum(a.tangent)}; }

inline DualTensor mean(const DualTensor& a) { return {mean(a.value), mean(a.tangent)}; }

} // namespace tfm::ad
