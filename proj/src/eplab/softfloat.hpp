// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace eplab {

enum class FpFormat { Binary32, Bfloat16 };

// Round-to-nearest-even to bfloat16, carried in a binary32 payload (low 16
// mantissa bits zero). NaN passes through quiet, sign of zero preserved.
float round_to_bf16(float x);

// Rounds to the format; Binary32 is the identity.
float fp_round(float x, FpFormat fmt);

// Arithmetic in binary32 with the result rounded to the format, modelling
// an accumulate-then-round pipeline.
float fp_add(float a, float b, FpFormat fmt);
float fp_mul(float a, float b, FpFormat fmt);

bool bit_equal(float a, float b);

}  // namespace eplab
