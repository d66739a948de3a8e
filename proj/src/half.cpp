#include "vlmerge/half.hpp"

#include <bit>

namespace vlmerge {

float f16_bits_to_f32(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;

    std::uint32_t out;
    if (exp == 0x1f) {
        out = sign | 0x7f800000u | (mant << 13);
    } else if (exp == 0) {
        if (mant == 0) {
            out = sign;
        } else {
            // renormalize the subnormal
            int e = -1;
            do {
                mant <<= 1;
                ++e;
            } while ((mant & 0x400u) == 0);
            mant &= 0x3ffu;
            out = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13);
        }
    } else {
        out = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(out);
}

std::uint16_t f32_to_f16_bits(float value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const int exp = static_cast<int>((bits >> 23) & 0xffu);
    const std::uint32_t mant = bits & 0x7fffffu;

    if (exp == 0xff) {
        if (mant == 0) {
            return sign | 0x7c00u;
        }
        return static_cast<std::uint16_t>(sign | 0x7e00u | (mant >> 13));
    }

    const int e = exp - 127 + 15;
    if (e >= 31) {
        return sign | 0x7c00u;
    }
    if (e <= 0) {
        if (e < -10) {
            return sign;
        }
        const std::uint32_t m = mant | 0x800000u;
        const int shift = 14 - e;
        const std::uint32_t half = 1u << (shift - 1);
        const std::uint32_t rem = m & ((1u << shift) - 1);
        std::uint32_t r = m >> shift;
        if (rem > half || (rem == half && (r & 1u))) {
            ++r;
        }
        return static_cast<std::uint16_t>(sign | r);
    }

    std::uint32_t r = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (r & 1u))) {
        ++r;  // may carry into the exponent, up to infinity
    }
    return static_cast<std::uint16_t>(sign | r);
}

float bf16_bits_to_f32(std::uint16_t bits) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

std::uint16_t f32_to_bf16_bits(float value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    if ((bits & 0x7f800000u) == 0x7f800000u && (bits & 0x7fffffu) != 0) {
        return static_cast<std::uint16_t>((bits >> 16) | 0x40u);
    }
    const std::uint32_t rounding = 0x7fffu + ((bits >> 16) & 1u);
    return static_cast<std::uint16_t>((bits + rounding) >> 16);
}

}  // namespace vlmerge
