// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "eplab/types.hpp"

namespace eplab {

// Outcome of the per-rank stable counting sort over routed copies.
// m_loc[t*topk+j] is the copy's position in this rank's expert-sorted
// layout, a permutation of [0, n_tok*topk).
struct LocalSortResult {
  std::vector<long long> m_loc;           // [n_tok*topk]
  std::vector<long long> expert_counts;   // [n_exp]  (C_exp)
  std::vector<long long> expert_offsets;  // [n_exp]  exclusive prefix (O_exp)
};

LocalSortResult local_stable_sort(const std::vector<int>& selected, long long n_tok, int topk,
                                  int n_exp);

// O_all[dst][e_loc][src]: copies sent to (dst, e_loc) by ranks before src.
struct GlobalOffsets {
  int world = 0;
  int experts_per_rank = 0;
  std::vector<long long> data;  // [world][epr][world]

  long long at(int dst, int e_loc, int src) const {
    return data[((size_t)dst * experts_per_rank + e_loc) * world + src];
  }
};

GlobalOffsets compute_global_offsets(const std::vector<std::vector<long long>>& all_expert_counts,
                                     int world, int n_exp);

struct MapEntry {
  int target_rank = 0;
  int local_expert = 0;
  long long offset = 0;  // within the destination expert's segment

  bool operator==(const MapEntry&) const = default;
};

// Deterministic global address book for one source rank, plus the
// destination-side expert segment layout needed to resolve flat addresses.
struct GlobalTokenMap {
  int rank = 0;
  long long n_tok = 0;
  int topk = 0;
  int world = 0;
  int experts_per_rank = 0;
  std::vector<MapEntry> entries;            // [n_tok*topk]
  std::vector<long long> recv_totals;       // [world*epr] tokens received per (rank, local expert)
  std::vector<long long> recv_segment_base; // [world*epr] exclusive prefix within each rank

  const MapEntry& at(long long t, int j) const { return entries[t * topk + j]; }
  long long recv_total(int rank_, int e_loc) const {
    return recv_totals[(size_t)rank_ * experts_per_rank + e_loc];
  }
  long long segment_base(int rank_, int e_loc) const {
    return recv_segment_base[(size_t)rank_ * experts_per_rank + e_loc];
  }
};

std::vector<GlobalTokenMap> build_global_token_map(const RoutingInstance& routing);

struct SendItem {
  long long token = 0;
  int slot = 0;  // k-slot
  int dst_rank = 0;
  int dst_expert = 0;  // local expert id on dst_rank
  long long dst_offset = 0;

  bool operator==(const SendItem&) const = default;
};

// Priority-ordered transmission queue for one source rank: destination
// local expert ascending, then destination rank, then destination offset.
// Built by iterating the expert offset array, not by a comparison sort.
struct SendSchedule {
  int rank = 0;
  std::vector<SendItem> items;
};

SendSchedule build_send_schedule(const GlobalTokenMap& map);

// One row per (rank, t, j), for diffing against oracles.
std::string export_map_table(const std::vector<GlobalTokenMap>& maps);

}  // namespace eplab
