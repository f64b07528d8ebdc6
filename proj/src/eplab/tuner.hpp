// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>

#include "eplab/perf_model.hpp"

namespace eplab {

// Exhaustive candidate grid. n_relay depends on n_disp (1 to n_disp/2 in
// steps of 4), so raw_grid_size carries the flat-factor arithmetic the
// paper reports (disp * comb * (n_sm/16)^2 * warps), while
// enumerated_count is the true dependent-grid size before constraint
// filtering.
struct SearchSpace {
  int n_sm = 0;
  std::vector<int> disp_choices;
  std::vector<int> comb_choices;
  std::vector<int> red_choices;
  std::vector<int> warp_choices;
  long long raw_grid_size = 0;
  long long enumerated_count = 0;

  static std::vector<int> relay_choices(int n_disp);
};

SearchSpace enumerate_space(const HardwareSpec& spec, const MoEShape& shape);

// Visits every grid point (constraint-filtered if feasible_only) in the
// canonical lexicographic order (n_disp, n_comb, n_relay, n_red, w).
void for_each_candidate(const SearchSpace& space, bool feasible_only,
                        const std::function<void(const TuneConfig&)>& fn);

struct TuneResult {
  TuneConfig best;
  double l_min = 0;
  long long evaluated = 0;
  double wall_seconds = 0;
  LatencyBreakdown breakdown;
};

// Exhaustive minimum-latency search. Deterministic for any worker count:
// ties are broken by ascending (n_disp, n_comb, n_relay), then descending
// n_red (all-SM reduction preferred among equals), then ascending w.
TuneResult search(const HardwareSpec& spec, const MoEShape& shape, const TrafficReport& traffic,
                  int n_workers = 0, ResidualScaling mode = ResidualScaling::AsPrinted);

// Same search loop with an arbitrary objective; used by tests to plant optima.
using LatencyFn = std::function<double(const TuneConfig&)>;
TuneResult search_with(const HardwareSpec& spec, const MoEShape& shape, const LatencyFn& eval,
                       int n_workers = 0);

// Bucketing memoization: 4096-token buckets keyed by (hardware, shape, bucket).
class TuneCache {
 public:
  TuneResult lookup(const HardwareSpec& spec, const MoEShape& shape, long long n_tok,
                    int n_workers = 0, ResidualScaling mode = ResidualScaling::AsPrinted);

  long long search_invocations() const { return invocations_; }
  size_t size() const { return entries_.size(); }

  void save(const std::string& path) const;
  void load(const std::string& path);  // missing file is an empty cache

 private:
  struct Key {
    std::string hw;
    std::string shape;
    long long bucket;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, TuneResult> entries_;
  long long invocations_ = 0;
};

long long token_bucket(long long n_tok);  // ceil(n_tok / 4096)

}  // namespace eplab
