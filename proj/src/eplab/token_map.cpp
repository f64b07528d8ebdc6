// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/token_map.hpp"

#include <sstream>

namespace eplab {

LocalSortResult local_stable_sort(const std::vector<int>& selected, long long n_tok, int topk,
                                  int n_exp) {
  LocalSortResult res;
  res.expert_counts.assign(n_exp, 0);
  for (int e : selected) res.expert_counts[e]++;

  res.expert_offsets.assign(n_exp, 0);
  long long acc = 0;
  for (int e = 0; e < n_exp; ++e) {
    res.expert_offsets[e] = acc;
    acc += res.expert_counts[e];
  }

  // stable counting sort: copies within an expert keep ascending (t, j)
  res.m_loc.resize((size_t)n_tok * topk);
  std::vector<long long> cursor = res.expert_offsets;
  for (long long i = 0; i < n_tok * topk; ++i) res.m_loc[i] = cursor[selected[i]]++;
  return res;
}

GlobalOffsets compute_global_offsets(const std::vector<std::vector<long long>>& all_expert_counts,
                                     int world, int n_exp) {
  if ((int)all_expert_counts.size() != world)
    throw ValidationError("all_expert_counts rank dimension != world");
  for (const auto& row : all_expert_counts)
    if ((int)row.size() != n_exp) throw ValidationError("all_expert_counts expert dimension != n_exp");
  if (n_exp % world != 0) throw ValidationError("n_exp not divisible by world");

  GlobalOffsets out;
  out.world = world;
  out.experts_per_rank = n_exp / world;
  out.data.assign((size_t)world * out.experts_per_rank * world, 0);
  for (int dst = 0; dst < world; ++dst) {
    for (int e_loc = 0; e_loc < out.experts_per_rank; ++e_loc) {
      int e_glob = dst * out.experts_per_rank + e_loc;
      long long acc = 0;  // exclusive prefix sum along the rank dimension
      for (int src = 0; src < world; ++src) {
        out.data[((size_t)dst * out.experts_per_rank + e_loc) * world + src] = acc;
        acc += all_expert_counts[src][e_glob];
      }
    }
  }
  return out;
}

std::vector<GlobalTokenMap> build_global_token_map(const RoutingInstance& routing) {
  validate_routing(routing);
  const int world = routing.world;
  const int epr = routing.n_exp / world;

  std::vector<LocalSortResult> local(world);
  std::vector<std::vector<long long>> all_counts(world);
  for (int r = 0; r < world; ++r) {
    local[r] = local_stable_sort(routing.selected_experts[r], routing.n_tok, routing.topk,
                                 routing.n_exp);
    all_counts[r] = local[r].expert_counts;
  }
  GlobalOffsets o_all = compute_global_offsets(all_counts, world, routing.n_exp);

  // destination-side segment layout: totals per (rank, local expert) and
  // exclusive prefix within each receiving rank
  std::vector<long long> recv_totals((size_t)world * epr, 0);
  for (int src = 0; src < world; ++src)
    for (int e = 0; e < routing.n_exp; ++e)
      recv_totals[(size_t)(e / epr) * epr + (e % epr)] += all_counts[src][e];
  std::vector<long long> seg_base((size_t)world * epr, 0);
  for (int r = 0; r < world; ++r) {
    long long acc = 0;
    for (int e = 0; e < epr; ++e) {
      seg_base[(size_t)r * epr + e] = acc;
      acc += recv_totals[(size_t)r * epr + e];
    }
  }

  std::vector<GlobalTokenMap> maps(world);
  for (int r = 0; r < world; ++r) {
    GlobalTokenMap& m = maps[r];
    m.rank = r;
    m.n_tok = routing.n_tok;
    m.topk = routing.topk;
    m.world = world;
    m.experts_per_rank = epr;
    m.recv_totals = recv_totals;
    m.recv_segment_base = seg_base;
    m.entries.resize((size_t)routing.n_tok * routing.topk);
    const auto& sel = routing.selected_experts[r];
    for (long long i = 0; i < routing.n_tok * routing.topk; ++i) {
      int e_id = sel[i];
      int r_tgt = e_id / epr;
      int e_loc = e_id % epr;
      long long final_idx =
          local[r].m_loc[i] - local[r].expert_offsets[e_id] + o_all.at(r_tgt, e_loc, r);
      m.entries[i] = MapEntry{r_tgt, e_loc, final_idx};
    }
  }
  return maps;
}

SendSchedule build_send_schedule(const GlobalTokenMap& map) {
  SendSchedule sched;
  sched.rank = map.rank;
  const long long n = map.n_tok * map.topk;
  sched.items.reserve((size_t)n);

  // bucket copies by (dst local expert, dst rank); each bucket fills in
  // ascending (t, j), which is ascending destination offset within the
  // bucket because the local sort is stable
  std::vector<std::vector<SendItem>> buckets((size_t)map.experts_per_rank * map.world);
  for (long long i = 0; i < n; ++i) {
    const MapEntry& e = map.entries[i];
    buckets[(size_t)e.local_expert * map.world + e.target_rank].push_back(
        SendItem{i / map.topk, (int)(i % map.topk), e.target_rank, e.local_expert, e.offset});
  }
  for (auto& b : buckets)
    for (auto& item : b) sched.items.push_back(item);
  return sched;
}

std::string export_map_table(const std::vector<GlobalTokenMap>& maps) {
  std::ostringstream os;
  os << "rank\ttoken\tslot\tdst_rank\tdst_expert\tdst_offset\n";
  for (const auto& m : maps) {
    for (long long t = 0; t < m.n_tok; ++t) {
      for (int j = 0; j < m.topk; ++j) {
        const MapEntry& e = m.at(t, j);
        os << m.rank << "\t" << t << "\t" << j << "\t" << e.target_rank << "\t" << e.local_expert
           << "\t" << e.offset << "\n";
      }
    }
  }
  return os.str();
}

}  // namespace eplab
