#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "axdelta/error.hpp"

namespace axdelta {

// Dense row-major FP32 matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                                 " does not match " + shape_string());
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    const std::vector<float>& data() const noexcept { return data_; }

    std::string shape_string() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// a * b^T. Every output element accumulates over k in ascending order
// starting from 0, so results are bit-identical to the textbook triple loop.
// The loop is arranged i-k-j over a transposed copy of b so the inner loop
// vectorizes across output columns without reassociating any sum.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions differ, a" + a.shape_string() + " b" +
                             b.shape_string());
    }
    const std::size_t k_dim = a.cols();
    const std::size_t n = b.rows();
    std::vector<float> bt(k_dim * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < k_dim; ++k) bt[k * n + j] = b(j, k);
    Matrix out(a.rows(), n);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const float* ar = a.row(i).data();
        float* orow = out.row(i).data();
        for (std::size_t k = 0; k < k_dim; ++k) {
            const float s = ar[k];
            const float* bk = bt.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += s * bk[j];
        }
    }
    return out;
}

// a^T * b, accumulating over rows of a and b in ascending order.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: row counts differ, a" + a.shape_string() + " b" +
                             b.shape_string());
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t n = 0; n < a.rows(); ++n) {
        const float* ar = a.row(n).data();
        const float* br = b.row(n).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const float s = ar[i];
            float* orow = out.row(i).data();
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += s * br[j];
        }
    }
    return out;
}

// a * b (no transpose).
inline Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul_nn: inner dimensions differ, a" + a.shape_string() + " b" +
                             b.shape_string());
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        float* orow = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const float s = a(i, k);
            const float* br = b.row(k).data();
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += s * br[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("add: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return out;
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("subtract: shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return out;
}

inline Matrix scaled(const Matrix& a, float s) {
    Matrix out = a;
    for (float& v : out.values()) v *= s;
    return out;
}

// Stacks matrices with equal column counts vertically.
inline Matrix vstack(std::span<const Matrix> parts) {
    if (parts.empty()) return {};
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw DimensionError("vstack: column counts differ");
        rows += p.rows();
    }
    std::vector<float> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Matrix(rows, cols, std::move(data));
}

inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
    if (begin > end || end > m.rows()) throw DimensionError("slice_rows: range out of bounds");
    std::vector<float> data(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
                            m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()));
    return Matrix(end - begin, m.cols(), std::move(data));
}

inline double frobenius_sq(const Matrix& m) {
    double s = 0.0;
    for (float v : m.values()) s += static_cast<double>(v) * v;
    return s;
}

inline double frobenius_distance_sq(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("frobenius_distance_sq: shape mismatch");
    double s = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - bv[i];
        s += d * d;
    }
    return s;
}

inline double relative_frobenius_error(const Matrix& actual, const Matrix& expected) {
    const double denom = std::sqrt(frobenius_sq(expected));
    const double num = std::sqrt(frobenius_distance_sq(actual, expected));
    return denom == 0.0 ? num : num / denom;
}

inline bool all_finite(const Matrix& m) {
    for (float v : m.values())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace axdelta
