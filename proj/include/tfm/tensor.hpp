#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tfm/error.hpp"

namespace tfm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

/// Dense row-major array of doubles.
///
/// Batched model math works on rank-2 tensors `[n x d]`; scalars are rank 0.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                             " data entries");
        }
    }

    /// Builds from literal values; rejects NaN/Inf.
    static Tensor from(Shape shape, std::vector<double> data) {
        for (double v : data) {
            if (!std::isfinite(v)) {
                throw NumericalError("non-finite literal in tensor construction");
            }
        }
        return Tensor(std::move(shape), std::move(data));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor vector(std::initializer_list<double> values) {
        return from(Shape{values.size()}, std::vector<double>(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return from(Shape{rows, cols}, std::move(data));
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const {
        require_matrix("rows");
        return shape_[0];
    }
    std::size_t cols() const {
        require_matrix("cols");
        return shape_[1];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const {
        if (data_.size() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        }
        return data_[0];
    }

    std::span<const double> row(std::size_t r) const { return std::span<const double>(data_).subspan(r * cols(), cols()); }
    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

    MatrixMap mat() {
        require_matrix("mat");
        return MatrixMap(data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1]));
    }
    ConstMatrixMap mat() const {
        require_matrix("mat");
        return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1]));
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    /// Rank-1 `[d]` becomes `[1 x d]`; rank-2 is returned unchanged.
    Tensor as_matrix() const {
        if (rank() == 2) {
            return *this;
        }
        if (rank() == 1) {
            return reshaped({1, shape_[0]});
        }
        if (rank() == 0) {
            return reshaped({1, 1});
        }
        throw UnsupportedOpError("rank-" + std::to_string(rank()) + " tensors are not supported");
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    void require_matrix(const char* what) const {
        if (shape_.size() != 2) {
            throw UnsupportedOpError(std::string(what) + " requires a rank-2 tensor, got " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

inline void require_rank_le2(const Tensor& a, const char* op) {
    if (a.rank() > 2) {
        throw UnsupportedOpError(std::string(op) + ": rank-" + std::to_string(a.rank()) + " tensors are not supported");
    }
}

/// Column `[n x 1]` filled with `v`.
inline Tensor column(std::size_t n, double v) { return Tensor(Shape{n, 1}, v); }

inline Tensor column(std::span<const double> values) {
    return Tensor(Shape{values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

} // namespace tfm
