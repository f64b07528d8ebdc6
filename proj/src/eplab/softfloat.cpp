// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/softfloat.hpp"

#include <cmath>
#include <cstring>

namespace eplab {

namespace {

std::uint32_t bits_of(float x) {
  std::uint32_t u;
  std::memcpy(&u, &x, sizeof(u));
  return u;
}

float float_of(std::uint32_t u) {
  float x;
  std::memcpy(&x, &u, sizeof(x));
  return x;
}

}  // namespace

float round_to_bf16(float x) {
  std::uint32_t u = bits_of(x);
  if (std::isnan(x)) return float_of((u | 0x00400000u) & 0xFFFF0000u);  // quiet, truncated
  std::uint32_t lsb = (u >> 16) & 1u;
  u += 0x7FFFu + lsb;  // round to nearest, ties to even
  return float_of(u & 0xFFFF0000u);
}

float fp_round(float x, FpFormat fmt) {
  return fmt == FpFormat::Bfloat16 ? round_to_bf16(x) : x;
}

float fp_add(float a, float b, FpFormat fmt) { return fp_round(a + b, fmt); }

float fp_mul(float a, float b, FpFormat fmt) { return fp_round(a * b, fmt); }

bool bit_equal(float a, float b) { return bits_of(a) == bits_of(b); }

}  // namespace eplab
