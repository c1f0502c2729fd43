#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "axdelta/half.hpp"
#include "axdelta/matrix.hpp"

namespace axdelta {

enum class Axis : std::uint8_t { Row = 0, Col = 1 };

inline const char* to_string(Axis a) { return a == Axis::Row ? "row" : "col"; }

// Sign matrix in {-1,+1}^{d_out x d_in} at one bit per entry, packed along the
// input axis. Bit k of byte m in a row holds column 8m+k (LSB first); 1 is +1,
// 0 is -1. Padding bits at the end of each row are zero.
class PackedSignMask {
public:
    PackedSignMask() = default;
    PackedSignMask(std::size_t d_out, std::size_t d_in)
        : d_out_(d_out), d_in_(d_in), bits_(d_out * row_bytes_for(d_in), 0) {}
    PackedSignMask(std::size_t d_out, std::size_t d_in, std::vector<std::uint8_t> bits)
        : d_out_(d_out), d_in_(d_in), bits_(std::move(bits)) {
        if (bits_.size() != d_out_ * row_bytes_for(d_in_)) {
            throw DimensionError("PackedSignMask: " + std::to_string(bits_.size()) +
                                 " bytes does not fit " + std::to_string(d_out_) + "x" +
                                 std::to_string(d_in_));
        }
    }

    static constexpr std::size_t row_bytes_for(std::size_t d_in) { return (d_in + 7) / 8; }

    std::size_t d_out() const noexcept { return d_out_; }
    std::size_t d_in() const noexcept { return d_in_; }
    std::size_t row_bytes() const noexcept { return row_bytes_for(d_in_); }
    std::span<const std::uint8_t> bytes() const noexcept { return bits_; }

    bool positive(std::size_t i, std::size_t j) const {
        return (bits_[i * row_bytes() + j / 8] >> (j % 8)) & 1u;
    }
    float sign(std::size_t i, std::size_t j) const { return positive(i, j) ? 1.0f : -1.0f; }

    void set_positive(std::size_t i, std::size_t j) {
        bits_[i * row_bytes() + j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
    }

    bool padding_clear() const {
        const std::size_t used = d_in_ % 8;
        if (used == 0) return true;
        const std::uint8_t pad = static_cast<std::uint8_t>(0xFFu << used);
        for (std::size_t i = 0; i < d_out_; ++i)
            if (bits_[i * row_bytes() + row_bytes() - 1] & pad) return false;
        return true;
    }

    friend bool operator==(const PackedSignMask&, const PackedSignMask&) = default;

private:
    std::size_t d_out_ = 0;
    std::size_t d_in_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Per-axis scales: one per output row (Row) or one per input column (Col).
struct AxisScaleVector {
    Axis axis = Axis::Row;
    std::vector<Half> values;

    std::vector<float> to_float() const {
        std::vector<float> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = half_to_float(values[i]);
        return out;
    }

    static AxisScaleVector from_float(Axis axis, std::span<const float> v) {
        AxisScaleVector s{axis, std::vector<Half>(v.size())};
        for (std::size_t i = 0; i < v.size(); ++i) s.values[i] = to_half_round(v[i]);
        return s;
    }

    friend bool operator==(const AxisScaleVector&, const AxisScaleVector&) = default;
};

inline std::size_t axis_length(Axis axis, std::size_t d_out, std::size_t d_in) {
    return axis == Axis::Row ? d_out : d_in;
}

// sign(0) is taken as +1.
inline PackedSignMask sign_mask(const Matrix& delta) {
    PackedSignMask m(delta.rows(), delta.cols());
    for (std::size_t i = 0; i < delta.rows(); ++i) {
        auto r = delta.row(i);
        for (std::size_t j = 0; j < delta.cols(); ++j)
            if (r[j] >= 0.0f) m.set_positive(i, j);
    }
    return m;
}

// Dense {-1,+1} matrix.
inline Matrix unpack(const PackedSignMask& mask) {
    Matrix s(mask.d_out(), mask.d_in());
    for (std::size_t i = 0; i < mask.d_out(); ++i) {
        auto r = s.row(i);
        for (std::size_t j = 0; j < mask.d_in(); ++j) r[j] = mask.sign(i, j);
    }
    return s;
}

namespace detail {

inline void check_patch_shapes(const Matrix& base, const PackedSignMask& mask, Axis axis,
                               std::size_t v_len) {
    if (base.rows() != mask.d_out() || base.cols() != mask.d_in()) {
        throw DimensionError("base " + base.shape_string() + " does not match mask (" +
                             std::to_string(mask.d_out()) + "x" + std::to_string(mask.d_in()) + ")");
    }
    const std::size_t want = axis_length(axis, mask.d_out(), mask.d_in());
    if (v_len != want) {
        throw DimensionError(std::string(to_string(axis)) + " scale vector has length " +
                             std::to_string(v_len) + ", expected " + std::to_string(want));
    }
}

}  // namespace detail

namespace detail {
// Byte value -> eight +/-1 factors, LSB first.
inline const std::array<std::array<float, 8>, 256>& sign_table() {
    static const auto table = [] {
        std::array<std::array<float, 8>, 256> t{};
        for (unsigned b = 0; b < 256; ++b)
            for (unsigned k = 0; k < 8; ++k) t[b][k] = ((b >> k) & 1u) ? 1.0f : -1.0f;
        return t;
    }();
    return table;
}
}  // namespace detail

// w[i,j] += v[axis index] * B[i,j], in place. Multiplying by +/-1 is exact.
inline void patch_in_place(Matrix& w, const PackedSignMask& mask, Axis axis, std::span<const float> v) {
    detail::check_patch_shapes(w, mask, axis, v.size());
    const auto& table = detail::sign_table();
    const std::size_t rb = mask.row_bytes();
    const std::uint8_t* bits = mask.bytes().data();
    const std::size_t cols = w.cols();
    const std::size_t full = cols / 8;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        float* r = w.row(i).data();
        const std::uint8_t* rowbits = bits + i * rb;
        for (std::size_t q = 0; q < full; ++q) {
            const float* t = table[rowbits[q]].data();
            float* rq = r + 8 * q;
            if (axis == Axis::Row) {
                const float s = v[i];
                for (std::size_t k = 0; k < 8; ++k) rq[k] += s * t[k];
            } else {
                const float* vq = v.data() + 8 * q;
                for (std::size_t k = 0; k < 8; ++k) rq[k] += vq[k] * t[k];
            }
        }
        for (std::size_t j = 8 * full; j < cols; ++j) {
            const float s = axis == Axis::Row ? v[i] : v[j];
            r[j] += table[rowbits[full]][j & 7] * s;
        }
    }
}

// W_hat[i,j] = base[i,j] + v[axis index] * B[i,j], with FP32 scales.
inline Matrix reconstruct(const Matrix& base, const PackedSignMask& mask, Axis axis,
                          std::span<const float> v) {
    Matrix w = base;
    patch_in_place(w, mask, axis, v);
    return w;
}

inline Matrix reconstruct(const Matrix& base, const PackedSignMask& mask, const AxisScaleVector& scale) {
    const auto v = scale.to_float();
    return reconstruct(base, mask, scale.axis, v);
}

inline Matrix scalar_reconstruct(const Matrix& base, const PackedSignMask& mask, float alpha) {
    const std::vector<float> v(mask.d_out(), alpha);
    return reconstruct(base, mask, Axis::Row, v);
}

// x * W_hat^T computed as x*W_b^T plus the sign correction, without forming W_hat.
inline Matrix patched_forward(const Matrix& x, const Matrix& base, const PackedSignMask& mask, Axis axis,
                              std::span<const float> v) {
    detail::check_patch_shapes(base, mask, axis, v.size());
    if (x.cols() != mask.d_in()) {
        throw DimensionError("patched_forward: input " + x.shape_string() + " has " +
                             std::to_string(x.cols()) + " features, layer expects " +
                             std::to_string(mask.d_in()));
    }
    const Matrix signs = unpack(mask);
    Matrix y = matmul_nt(x, base);
    if (axis == Axis::Row) {
        const Matrix s = matmul_nt(x, signs);
        for (std::size_t n = 0; n < y.rows(); ++n) {
            auto yr = y.row(n);
            auto sr = s.row(n);
            for (std::size_t i = 0; i < y.cols(); ++i) yr[i] += v[i] * sr[i];
        }
    } else {
        Matrix xs = x;
        for (std::size_t n = 0; n < xs.rows(); ++n) {
            auto r = xs.row(n);
            for (std::size_t j = 0; j < xs.cols(); ++j) r[j] *= v[j];
        }
        const Matrix c = matmul_nt(xs, signs);
        for (std::size_t k = 0; k < y.size(); ++k) y.values()[k] += c.values()[k];
    }
    return y;
}

inline Matrix patched_forward(const Matrix& x, const Matrix& base, const PackedSignMask& mask,
                              const AxisScaleVector& scale) {
    const auto v = scale.to_float();
    return patched_forward(x, base, mask, scale.axis, v);
}

}  // namespace axdelta
