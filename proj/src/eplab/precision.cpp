// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/precision.hpp"

#include <cmath>

namespace eplab {

namespace {

struct Rng {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform01() { return (next() >> 11) * 0x1.0p-53; }
};

// log-uniform magnitudes over [2^-4, 2^8] with random signs; guarantees
// absorption events in bf16 accumulation
float synth_value(Rng& rng, FpFormat fmt) {
  double mag = std::exp2(-4.0 + 12.0 * rng.uniform01());
  double sign = (rng.next() & 1) ? -1.0 : 1.0;
  return fp_round((float)(sign * mag), fmt);
}

float fold(const std::vector<ReductionTerm>& terms, FpFormat fmt) {
  if (terms.empty()) return 0.0f;
  float acc = fp_mul(terms[0].weight, terms[0].value, fmt);
  for (size_t i = 1; i < terms.size(); ++i)
    acc = fp_add(acc, fp_mul(terms[i].weight, terms[i].value, fmt), fmt);
  return acc;
}

void tally(PrecisionReport& rep, float a, float b) {
  ++rep.elements;
  if (!bit_equal(a, b)) ++rep.non_bitwise;
  rep.max_diff = std::max(rep.max_diff, (double)std::abs((double)a - (double)b));
}

}  // namespace

std::vector<float> accumulate(const ReductionPlan& plan, FpFormat fmt) {
  std::vector<float> out;
  out.reserve(plan.tokens.size());
  for (const auto& terms : plan.tokens) out.push_back(fold(terms, fmt));
  return out;
}

PrecisionReport fused_vs_sequential(const RoutingInstance& routing, const MoEShape& shape,
                                    const HardwareSpec& spec, const TuneConfig& cfg,
                                    std::uint64_t seed, FpFormat fmt, OrderPolicy control) {
  SimParams params{spec, shape, cfg, routing, false};
  SimTimeline combine = run_gemm_combine_sim(params);

  PrecisionReport rep;
  const int topk = routing.topk;
  for (int r = 0; r < routing.world; ++r) {
    Rng value_rng{seed ^ (0xC0FFEE ^ (std::uint64_t)r << 17)};
    Rng perm_rng{(seed * 0x9E3779B97F4A7C15ULL) ^ (std::uint64_t)r};
    for (long long t = 0; t < routing.n_tok; ++t) {
      std::vector<ReductionTerm> canonical(topk);
      for (int k = 0; k < topk; ++k) {
        canonical[k] = ReductionTerm{k, fp_round(routing.weight_at(r, t, k), fmt),
                                     synth_value(value_rng, fmt)};
      }
      // path A: sequential reference
      float a = fold(canonical, fmt);

      // path B: reduce fires only when every replica has arrived
      double complete_at = 0;
      for (int k = 0; k < topk; ++k) {
        double arr = combine.replica_arrival[r][(size_t)(t * topk + k)];
        if (arr < 0) throw std::logic_error("combine sim left a replica without arrival time");
        complete_at = std::max(complete_at, arr);
      }
      (void)complete_at;  // the barrier is the point; order below is fixed

      std::vector<ReductionTerm> b_terms = canonical;
      if (control == OrderPolicy::Permuted) {
        for (int k = topk - 1; k > 0; --k) {
          int j = (int)(perm_rng.next() % (std::uint64_t)(k + 1));
          std::swap(b_terms[k], b_terms[j]);
        }
      }
      float b = fold(b_terms, fmt);
      tally(rep, a, b);
    }
  }
  rep.frac_non_bitwise = rep.elements ? (double)rep.non_bitwise / rep.elements : 0.0;
  return rep;
}

PrecisionReport split_batch_experiment(const MoEShape& shape, std::uint64_t seed, FpFormat fmt,
                                       long long split_at) {
  const long long n = shape.n_tok;
  const int cols = 16;
  if (split_at < 0) split_at = n / 2;
  if (split_at > n) split_at = n;

  Rng rng{seed ^ 0xBADC0DEULL};
  std::vector<std::vector<float>> g((size_t)n, std::vector<float>(cols));
  for (long long t = 0; t < n; ++t)
    for (int c = 0; c < cols; ++c) g[(size_t)t][c] = synth_value(rng, fmt);

  PrecisionReport rep;
  for (int c = 0; c < cols; ++c) {
    float full = 0.0f;
    bool first = true;
    for (long long t = 0; t < n; ++t) {
      full = first ? g[(size_t)t][c] : fp_add(full, g[(size_t)t][c], fmt);
      first = false;
    }
    auto partial = [&](long long lo, long long hi) {
      float acc = 0.0f;
      bool fst = true;
      for (long long t = lo; t < hi; ++t) {
        acc = fst ? g[(size_t)t][c] : fp_add(acc, g[(size_t)t][c], fmt);
        fst = false;
      }
      return std::pair<float, bool>{acc, !fst};
    };
    auto [h1, has1] = partial(0, split_at);
    auto [h2, has2] = partial(split_at, n);
    float split = has1 && has2 ? fp_add(h1, h2, fmt) : (has1 ? h1 : h2);
    tally(rep, full, split);
  }
  rep.frac_non_bitwise = rep.elements ? (double)rep.non_bitwise / rep.elements : 0.0;
  return rep;
}

}  // namespace eplab
