// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/traffic.hpp"

#include <cmath>
#include <cstdlib>

namespace eplab {

BigInt stirling2(int n, int k) {
  if (n < 0 || k < 0 || k > n || n > 64)
    throw ValidationError("stirling2 supports 0 <= k <= n <= 64");
  // S(n,k) = k*S(n-1,k) + S(n-1,k-1)
  std::vector<BigInt> row(k + 1, 0);
  row[0] = 1;  // S(0,0)
  for (int i = 1; i <= n; ++i) {
    for (int j = std::min(i, k); j >= 1; --j) row[j] = j * row[j] + row[j - 1];
    row[0] = 0;
  }
  return row[k];
}

namespace {

BigInt binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  BigInt r = 1;
  for (int i = 0; i < k; ++i) {
    r *= (n - i);
    r /= (i + 1);
  }
  return r;
}

BigInt factorial(int n) {
  BigInt r = 1;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

double ratio_to_double(const BigInt& num, const BigInt& den) {
  // both fit comfortably in double after a common shift for n,k <= 64
  return num.convert_to<double>() / den.convert_to<double>();
}

}  // namespace

DistinctRankDistribution distinct_rank_distribution(int world, int topk) {
  if (world < 1 || topk < 1) throw ValidationError("world and topk must be >= 1");
  DistinctRankDistribution d;
  d.world = world;
  d.topk = topk;
  d.denominator = 1;
  for (int i = 0; i < topk; ++i) d.denominator *= world;

  int xmax = std::min(world, topk);
  d.numerators.resize(xmax);
  d.probs.resize(xmax);
  BigInt check = 0;
  BigInt e_num = 0;
  for (int x = 1; x <= xmax; ++x) {
    BigInt num = binomial(world, x) * factorial(x) * stirling2(topk, x);
    d.numerators[x - 1] = num;
    d.probs[x - 1] = ratio_to_double(num, d.denominator);
    check += num;
    e_num += x * num;
  }
  if (check != d.denominator)
    throw ValidationError("distinct_rank_distribution: probabilities do not sum to 1");
  d.expectation = ratio_to_double(e_num, d.denominator);
  // closed form sanity: E[X] = W * (1 - (1 - 1/W)^k)
  double closed = world * (1.0 - std::pow(1.0 - 1.0 / world, topk));
  if (std::abs(d.expectation - closed) > 1e-12 * std::max(1.0, closed))
    throw ValidationError("distinct_rank_distribution: expectation mismatch vs closed form");
  d.expected_saving_fraction = (topk - d.expectation) / topk;
  return d;
}

namespace {

TrafficReport assemble(const MoEShape& shape, int world, double mean_distinct_nvl,
                       TrafficReport::Basis basis) {
  TrafficReport r;
  r.basis = basis;
  const double s = (double)shape.token_bytes();
  const double n = (double)shape.n_tok;
  r.v_allgather = (double)world * n * s;
  r.v_alltoall = n * (double)shape.topk * s;
  if (world == 1) {
    // single rank: no NVLink exists, every copy is an HBM replica
    r.v_megakernel_nvl = 0;
  } else {
    r.v_megakernel_nvl = n * mean_distinct_nvl * s;
  }
  // byte conservation holds exactly by construction
  r.v_megakernel_hbm = r.v_alltoall - r.v_megakernel_nvl;
  return r;
}

}  // namespace

TrafficReport volume_expected(const MoEShape& shape, const HardwareSpec& spec,
                              SelfRankAccounting acc) {
  const int world = spec.world_size;
  double ex = distinct_rank_distribution(world, shape.topk).expectation;
  if (acc == SelfRankAccounting::RemoteOnly && world > 1) {
    // every rank is hit with equal probability; drop the self rank's share
    ex *= (double)(world - 1) / world;
  }
  return assemble(shape, world, ex, TrafficReport::Basis::Expected);
}

TrafficReport volume_exact(const RoutingInstance& routing, const MoEShape& shape,
                           const HardwareSpec& spec, SelfRankAccounting acc) {
  const int world = routing.world;
  const int epr = routing.n_exp / world;
  long long total_distinct = 0;
  std::vector<char> hit(world);
  for (int r = 0; r < world; ++r) {
    for (long long t = 0; t < routing.n_tok; ++t) {
      std::fill(hit.begin(), hit.end(), 0);
      for (int j = 0; j < routing.topk; ++j) {
        int dst = routing.expert_at(r, t, j) / epr;
        if (acc == SelfRankAccounting::RemoteOnly && dst == r) continue;
        if (!hit[dst]) {
          hit[dst] = 1;
          ++total_distinct;
        }
      }
    }
  }
  (void)spec;
  // per-rank average, so the report is comparable with volume_expected
  double copies = (double)routing.n_tok * world;
  double mean_distinct = copies > 0 ? (double)total_distinct / copies : 0.0;
  MoEShape sh = shape;
  sh.n_tok = routing.n_tok;
  return assemble(sh, world, mean_distinct, TrafficReport::Basis::ExactInstance);
}

}  // namespace eplab
