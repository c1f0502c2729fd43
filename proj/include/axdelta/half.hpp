#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

#include "axdelta/error.hpp"

namespace axdelta {

// IEEE-754 binary16 payload.
struct Half {
    std::uint16_t bits = 0;

    friend constexpr bool operator==(Half, Half) = default;
};

inline constexpr std::uint16_t kHalfMaxFinite = 0x7BFF;  // 65504

// Round-to-nearest-even FP32 -> binary16. Overflow saturates to the largest
// finite half instead of producing Inf.
inline Half to_half_round(float x) {
    if (std::isnan(x)) throw InvalidValueError("to_half_round: NaN input");

    const std::uint32_t f = std::bit_cast<std::uint32_t>(x);
    const std::uint16_t sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
    const std::uint32_t abs = f & 0x7FFFFFFFu;

    // 65520 is the midpoint between 65504 and the next (nonexistent) step;
    // anything at or above it would round to Inf.
    if (abs >= 0x477FF000u) return Half{static_cast<std::uint16_t>(sign | kHalfMaxFinite)};

    if (abs >= 0x38800000u) {
        // Normal half range: rebias exponent, round 13 dropped mantissa bits.
        const std::uint32_t mant_odd = (abs >> 13) & 1u;
        std::uint32_t r = abs + 0xFFFu + mant_odd;
        r -= (127u - 15u) << 23;
        return Half{static_cast<std::uint16_t>(sign | (r >> 13))};
    }
    if (abs < 0x33000000u) {
        // Below half of the smallest subnormal (2^-25): rounds to zero.
        return Half{sign};
    }
    // Subnormal half. Value = m * 2^-24 with m in [0, 1024].
    const std::uint32_t exp = abs >> 23;
    const std::uint32_t mant = (abs & 0x7FFFFFu) | 0x800000u;
    const std::uint32_t shift = 126u - exp;  // 14..24 for exp in [102,112]
    const std::uint32_t q = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1u);
    std::uint32_t m = q;
    if (rem > halfway || (rem == halfway && (q & 1u))) ++m;
    return Half{static_cast<std::uint16_t>(sign | m)};
}

inline float half_to_float(Half h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h.bits & 0x8000u) << 16;
    const std::uint32_t exp = (h.bits >> 10) & 0x1Fu;
    const std::uint32_t mant = h.bits & 0x3FFu;
    if (exp == 0) {
        const float v = std::ldexp(static_cast<float>(mant), -24);
        return sign ? -v : v;
    }
    if (exp == 31) {
        return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
    }
    return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

// Value after a round trip through binary16.
inline float round_through_half(float x) { return half_to_float(to_half_round(x)); }

}  // namespace axdelta
