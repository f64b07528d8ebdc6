// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-side oracles, independent of the library implementations they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

#include "eplab/token_map.hpp"
#include "eplab/types.hpp"

namespace oracle {

// Sequential gather-then-stable-sort reference for the global token map:
// concatenate all ranks' copies in (src, t, j) order, stable-sort by global
// expert, and read each copy's position within its expert segment.
struct OracleEntry {
  int src;
  long long token;
  int slot;
  int dst_rank;
  int dst_expert;
  long long offset;
};

inline std::vector<OracleEntry> gather_stable_sort(const eplab::RoutingInstance& r) {
  struct Copy {
    int expert;
    int src;
    long long token;
    int slot;
  };
  std::vector<Copy> copies;
  for (int rank = 0; rank < r.world; ++rank)
    for (long long t = 0; t < r.n_tok; ++t)
      for (int j = 0; j < r.topk; ++j)
        copies.push_back({r.expert_at(rank, t, j), rank, t, j});
  std::stable_sort(copies.begin(), copies.end(),
                   [](const Copy& a, const Copy& b) { return a.expert < b.expert; });
  int epr = r.n_exp / r.world;
  std::vector<long long> pos(r.n_exp, 0);
  std::vector<OracleEntry> out;
  for (const Copy& c : copies)
    out.push_back({c.src, c.token, c.slot, c.expert / epr, c.expert % epr, pos[c.expert]++});
  return out;
}

// counting-sort oracle for the local stable sort: positions of flattened
// (i, expert) pairs after a stable sort on expert
inline std::vector<long long> counting_sort_positions(const std::vector<int>& experts, int n_exp) {
  std::vector<std::vector<long long>> bins(n_exp);
  for (size_t i = 0; i < experts.size(); ++i) bins[experts[i]].push_back((long long)i);
  std::vector<long long> pos(experts.size());
  long long p = 0;
  for (const auto& b : bins)
    for (long long i : b) pos[(size_t)i] = p++;
  return pos;
}

// Exact distribution of distinct destination ranks when topk distinct
// experts are drawn uniformly without replacement from n_exp experts spread
// evenly over `world` ranks (inclusion-exclusion over covered rank sets).
// Converges to the with-replacement model as n_exp -> infinity.
inline std::vector<double> distinct_rank_distribution_noreplace(int n_exp, int world, int topk) {
  int m = n_exp / world;
  auto log_comb = [](long long n, long long k) {
    if (k < 0 || k > n) return -1e300;
    double s = 0;
    for (long long i = 0; i < k; ++i) s += std::log((double)(n - i)) - std::log((double)(i + 1));
    return s;
  };
  double log_den = log_comb(n_exp, topk);
  int xmax = std::min(world, topk);
  std::vector<double> probs(xmax + 1, 0.0);
  for (int x = 1; x <= xmax; ++x) {
    double sum = 0;
    for (int j = 0; j <= x; ++j) {
      double c_xj = std::exp(log_comb(x, j));
      double term = ((x - j) * (long long)m >= topk)
                        ? std::exp(log_comb((long long)(x - j) * m, topk) - log_den)
                        : 0.0;
      sum += ((j % 2) ? -1.0 : 1.0) * c_xj * term;
    }
    probs[x] = std::exp(log_comb(world, x)) * sum;
  }
  return probs;
}

// deterministic small rng for test instance generation
struct Rng {
  std::uint64_t s;
  std::uint64_t next() {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

}  // namespace oracle
