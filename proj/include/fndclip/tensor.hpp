#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fndclip/errors.hpp"

namespace fndclip {

/// Dense row-major matrix of 64-bit reals. Rows are samples, columns features.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match " + std::to_string(rows_) + "x" +
                                 std::to_string(cols_));
        }
    }

    /// Builds from nested rows; all rows must have equal length.
    static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Tensor2 t(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged rows in Tensor2::from_rows");
            std::copy(row.begin(), row.end(), t.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
            ++i;
        }
        return t;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor2&, const Tensor2&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap view(const Tensor2& t) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MutMap view(Tensor2& t) {
    return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline std::string shape_str(const Tensor2& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

} // namespace detail

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape " + detail::shape_str(a) + " vs " +
                             detail::shape_str(b));
    }
}

/// a · b
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + detail::shape_str(a) + " · " + detail::shape_str(b));
    }
    Tensor2 out(a.rows(), b.cols());
    if (a.rows() > 0 && b.cols() > 0) detail::view(out).noalias() = detail::view(a) * detail::view(b);
    return out;
}

/// out += aᵀ · b
inline void matmul_tn_accumulate(const Tensor2& a, const Tensor2& b, Tensor2& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw DimensionError("matmul_tn: " + detail::shape_str(a) + "ᵀ · " + detail::shape_str(b) +
                             " into " + detail::shape_str(out));
    }
    if (out.size() > 0) detail::view(out).noalias() += detail::view(a).transpose() * detail::view(b);
}

/// a · bᵀ
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: " + detail::shape_str(a) + " · " + detail::shape_str(b) + "ᵀ");
    }
    Tensor2 out(a.rows(), b.rows());
    if (out.size() > 0) detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
    return out;
}

/// Elementwise a ⊙ b.
inline Tensor2 hadamard(const Tensor2& a, const Tensor2& b) {
    require_same_shape(a, b, "hadamard");
    Tensor2 out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

inline Tensor2& add_inplace(Tensor2& a, const Tensor2& b) {
    require_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
    return a;
}

} // namespace fndclip
