#pragma once

// Primitive kernels on plain tensors. The forward-mode (dual.hpp) and
// reverse-mode (tape.hpp) layers are expressed in terms of these.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tfm/tensor.hpp"

namespace tfm::ad {

namespace detail {

template <class F>
Tensor map(const Tensor& a, F&& f) {
    Tensor out(a.shape());
    const auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = f(src[i]);
    }
    return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F&& f) {
    require_same_shape(a, b, op);
    Tensor out(a.shape());
    const auto x = a.data();
    const auto y = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        dst[i] = f(x[i], y[i]);
    }
    return out;
}

inline void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw UnsupportedOpError(std::string(op) + " requires rank-2 operands, got " + shape_str(a.shape()));
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    }
    Tensor out(Shape{a.rows(), b.cols()});
    out.mat().noalias() = a.mat() * b.mat();
    return out;
}

/// a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul_tn");
    detail::require_matrix(b, "matmul_tn");
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: row counts differ");
    }
    Tensor out(Shape{a.cols(), b.cols()});
    out.mat().noalias() = a.mat().transpose() * b.mat();
    return out;
}

/// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: column counts differ");
    }
    Tensor out(Shape{a.rows(), b.rows()});
    out.mat().noalias() = a.mat() * b.mat().transpose();
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_rank_le2(a, "add");
    return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_rank_le2(a, "sub");
    return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_rank_le2(a, "mul");
    return detail::zip(a, b, "mul", [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double s) {
    require_rank_le2(a, "scale");
    return detail::map(a, [s](double x) { return s * x; });
}

/// Adds `bias` (`[m]` or `[1 x m]`) to every row of `a` (`[n x m]`).
inline Tensor add_row(const Tensor& a, const Tensor& bias) {
    detail::require_matrix(a, "add_row");
    if (bias.size() != a.cols() || bias.rank() > 2 || (bias.rank() == 2 && bias.rows() != 1)) {
        throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
    }
    Tensor out = a;
    const std::size_t m = a.cols();
    auto dst = out.data();
    const auto b = bias.data();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            dst[i * m + j] += b[j];
        }
    }
    return out;
}

/// Scales row i of `a` by `col(i, 0)`.
inline Tensor mul_rows(const Tensor& a, const Tensor& col) {
    detail::require_matrix(a, "mul_rows");
    if (col.rank() != 2 || col.cols() != 1 || col.rows() != a.rows()) {
        throw ShapeError("mul_rows: column " + shape_str(col.shape()) + " does not fit " + shape_str(a.shape()));
    }
    Tensor out(a.shape());
    const std::size_t m = a.cols();
    const auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double s = col[i];
        for (std::size_t j = 0; j < m; ++j) {
            dst[i * m + j] = s * src[i * m + j];
        }
    }
    return out;
}

/// Sum over columns of each row: `[n x m] -> [n x 1]`.
inline Tensor sum_cols(const Tensor& a) {
    detail::require_matrix(a, "sum_cols");
    Tensor out(Shape{a.rows(), 1});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (double v : a.row(i)) {
            s += v;
        }
        out[i] = s;
    }
    return out;
}

/// Column-wise sum: `[n x m] -> [1 x m]`.
inline Tensor sum_rows(const Tensor& a) {
    detail::require_matrix(a, "sum_rows");
    Tensor out(Shape{1, a.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            out[j] += r[j];
        }
    }
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "concat_cols");
    detail::require_matrix(b, "concat_cols");
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t ma = a.cols();
    const std::size_t mb = b.cols();
    Tensor out(Shape{a.rows(), ma + mb});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
        std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(ma));
    }
    return out;
}

/// Splits `[n x (ma + mb)]` back into the two halves of a concat.
inline std::pair<Tensor, Tensor> split_cols(const Tensor& a, std::size_t ma) {
    detail::require_matrix(a, "split_cols");
    const std::size_t mb = a.cols() - ma;
    Tensor left(Shape{a.rows(), ma});
    Tensor right(Shape{a.rows(), mb});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto src = a.row(i);
        std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(ma), left.row(i).begin());
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(ma), src.end(), right.row(i).begin());
    }
    return {std::move(left), std::move(right)};
}

/// Column-interleave two `[n x m]` tensors: output column 2k is a(:,k), 2k+1 is b(:,k).
inline Tensor interleave_cols(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "interleave_cols");
    require_same_shape(a, b, "interleave_cols");
    const std::size_t m = a.cols();
    Tensor out(Shape{a.rows(), 2 * m});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < m; ++k) {
            out(i, 2 * k) = a(i, k);
            out(i, 2 * k + 1) = b(i, k);
        }
    }
    return out;
}

inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
    detail::require_matrix(table, "gather_rows");
    Tensor out(Shape{index.size(), table.cols()});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= table.rows()) {
            throw IndexError("gather_rows: row " + std::to_string(index[i]) + " out of range " +
                             std::to_string(table.rows()));
        }
        std::copy(table.row(index[i]).begin(), table.row(index[i]).end(), out.row(i).begin());
    }
    return out;
}

inline Tensor tanh(const Tensor& a) {
    require_rank_le2(a, "tanh");
    return detail::map(a, [](double x) { return std::tanh(x); });
}

inline Tensor silu(const Tensor& a) {
    require_rank_le2(a, "silu");
    return detail::map(a, [](double x) { return x * detail::sigmoid(x); });
}

inline Tensor sin(const Tensor& a) {
    require_rank_le2(a, "sin");
    return detail::map(a, [](double x) { return std::sin(x); });
}

inline Tensor cos(const Tensor& a) {
    require_rank_le2(a, "cos");
    return detail::map(a, [](double x) { return std::cos(x); });
}

inline Tensor square(const Tensor& a) {
    require_rank_le2(a, "square");
    return detail::map(a, [](double x) { return x * x; });
}

inline Tensor sum(const Tensor& a) {
    require_rank_le2(a, "sum");
    double s = 0.0;
    for (double v : a.data()) {
        s += v;
    }
    return Tensor::scalar(s);
}

inline Tensor mean(const Tensor& a) {
    require_rank_le2(a, "mean");
    if (a.empty()) {
        throw ShapeError("mean of empty tensor");
    }
    return Tensor::scalar(sum(a).item() / static_cast<double>(a.size()));
}

} // namespace tfm::ad
