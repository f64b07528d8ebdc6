// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "eplab/sim.hpp"
#include "eplab/softfloat.hpp"
#include "eplab/types.hpp"

namespace eplab {

// Order in which a token's top-k contributions are accumulated.
enum class OrderPolicy { Canonical, Permuted, SplitBatch };

struct ReductionTerm {
  int k = 0;
  float weight = 0;
  float value = 0;
};

// Per-token ordered accumulation lists; each replica appears exactly once.
struct ReductionPlan {
  std::vector<std::vector<ReductionTerm>> tokens;
};

// Left-fold weighted sum in plan order, every intermediate rounded.
std::vector<float> accumulate(const ReductionPlan& plan, FpFormat fmt);

struct PrecisionReport {
  double max_diff = 0;
  double frac_non_bitwise = 0;
  long long elements = 0;
  long long non_bitwise = 0;
};

// Path A: sequential baseline (canonical k-ascending fold, single pass).
// Path B: the simulated MegaKernel combine -- replica arrival times come
// from run_gemm_combine_sim, each token reduces only once all top-k
// replicas have arrived, accumulation in canonical slot order. With
// control = Permuted, path B instead folds in a seeded per-token
// permutation (the broken-reducer control).
PrecisionReport fused_vs_sequential(const RoutingInstance& routing, const MoEShape& shape,
                                    const HardwareSpec& spec, const TuneConfig& cfg,
                                    std::uint64_t seed, FpFormat fmt,
                                    OrderPolicy control = OrderPolicy::Canonical);

// Weight-gradient style column sums: full left-fold over the token axis vs
// (fold first half) + (fold second half). split_at < 0 means n_tok/2.
PrecisionReport split_batch_experiment(const MoEShape& shape, std::uint64_t seed, FpFormat fmt,
                                       long long split_at = -1);

}  // namespace eplab
