#pragma once

#include <cstdint>

namespace vlmerge {

// IEEE binary16 and bfloat16 scalar conversions. Narrowing rounds to nearest,
// ties to even; NaN payloads are kept quiet.
float f16_bits_to_f32(std::uint16_t bits);
std::uint16_t f32_to_f16_bits(float value);

float bf16_bits_to_f32(std::uint16_t bits);
std::uint16_t f32_to_bf16_bits(float value);

}  // namespace vlmerge
