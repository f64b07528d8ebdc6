// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/routing.hpp"

#include <numeric>

namespace eplab {

namespace {

// splitmix64: small, fast, and identical on every platform, which keeps the
// "pure function of (shape, world, seed)" contract independent of stdlib
// distribution internals.
struct Rng {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  // uniform in [0, n) via rejection-free 128-bit multiply
  std::uint64_t below(std::uint64_t n) {
    return (std::uint64_t)(((__uint128_t)next() * n) >> 64);
  }
  double uniform01() { return (next() >> 11) * 0x1.0p-53; }
};

}  // namespace

RoutingInstance sample_routing(const MoEShape& shape, int world, std::uint64_t seed) {
  if (shape.topk > shape.n_exp)
    throw ValidationError("topk exceeds n_exp; cannot draw distinct experts");

  RoutingInstance out;
  out.world = world;
  out.n_exp = shape.n_exp;
  out.topk = shape.topk;
  out.n_tok = shape.n_tok;
  out.seed = seed;
  out.selected_experts.resize(world);
  out.gate_weights.resize(world);

  std::vector<int> pool(shape.n_exp);
  for (int r = 0; r < world; ++r) {
    Rng rng{seed ^ (0xA5A5A5A5A5A5A5A5ULL + (std::uint64_t)r * 0x9E3779B97F4A7C15ULL)};
    auto& sel = out.selected_experts[r];
    auto& gw = out.gate_weights[r];
    sel.resize((size_t)(shape.n_tok * shape.topk));
    gw.resize(sel.size());
    std::iota(pool.begin(), pool.end(), 0);
    for (long long t = 0; t < shape.n_tok; ++t) {
      // partial Fisher-Yates over the expert pool
      for (int j = 0; j < shape.topk; ++j) {
        std::uint64_t pick = j + rng.below((std::uint64_t)(shape.n_exp - j));
        std::swap(pool[j], pool[pick]);
        sel[t * shape.topk + j] = pool[j];
      }
      double sum = 0.0;
      for (int j = 0; j < shape.topk; ++j) {
        double u = rng.uniform01();
        gw[t * shape.topk + j] = (float)u;
        sum += u;
      }
      if (sum > 0) {
        for (int j = 0; j < shape.topk; ++j)
          gw[t * shape.topk + j] = (float)(gw[t * shape.topk + j] / sum);
      }
    }
  }
  return out;
}

}  // namespace eplab
