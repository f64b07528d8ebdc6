// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <vector>

#include "eplab/types.hpp"

namespace eplab {

using BigInt = boost::multiprecision::cpp_int;

// Stirling numbers of the second kind, exact, 0 <= k <= n <= 64.
BigInt stirling2(int n, int k);

// Occupancy distribution of X = distinct destination ranks for one token
// under topk independent uniform rank choices (the balanced-routing model):
// P(X=x) = C(world,x) * x! * S2(topk,x) / world^topk, exact rationals.
struct DistinctRankDistribution {
  int world = 0;
  int topk = 0;
  std::vector<BigInt> numerators;  // index x-1, x in [1, min(topk, world)]
  BigInt denominator;              // world^topk
  std::vector<double> probs;
  double expectation = 0;
  double expected_saving_fraction = 0;  // (topk - E[X]) / topk

  double prob(int x) const { return probs[x - 1]; }
};

DistinctRankDistribution distinct_rank_distribution(int world, int topk);

// Whether copies destined for the source rank itself count toward the
// NVLink volume (the Table-1 accounting) or are moved to the HBM side.
enum class SelfRankAccounting { IncludeSelf, RemoteOnly };

struct TrafficReport {
  double v_allgather = 0;
  double v_alltoall = 0;
  double v_megakernel_nvl = 0;
  double v_megakernel_hbm = 0;
  enum class Basis { Expected, ExactInstance } basis = Basis::Expected;
};

TrafficReport volume_expected(const MoEShape& shape, const HardwareSpec& spec,
                              SelfRankAccounting acc = SelfRankAccounting::IncludeSelf);

TrafficReport volume_exact(const RoutingInstance& routing, const MoEShape& shape,
                           const HardwareSpec& spec,
                           SelfRankAccounting acc = SelfRankAccounting::IncludeSelf);

}  // namespace eplab
