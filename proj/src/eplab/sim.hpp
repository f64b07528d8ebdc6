// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eplab/token_map.hpp"
#include "eplab/types.hpp"

namespace eplab {

enum class Role { Comm, Relay, Comp, Reduce };

const char* role_name(Role r);

struct Interval {
  double start = 0;
  double end = 0;
  Role role = Role::Comm;
  long long task = -1;
  bool stall = false;  // waiting on a scoreboard flag / barrier

  bool operator==(const Interval&) const = default;
};

// Linearized per-rank task ranges and their payload slices. Claim order is
// [comm | relay | comp] for Dispatch+GroupGEMM and [comm | comp | reduce]
// for GroupGEMM+Combine; the shared cursor dispenses ids in that order.
struct TaskQueueInfo {
  long long n_comm = 0;
  long long n_relay = 0;
  long long n_comp = 0;
  long long n_reduce = 0;
  std::vector<std::pair<long long, long long>> comm_slices;    // send item ranges
  std::vector<std::pair<long long, long long>> relay_ranges;   // tile ranges
  std::vector<std::pair<long long, long long>> reduce_ranges;  // token ranges

  long long total() const { return n_comm + n_relay + n_comp + n_reduce; }
};

struct SimTimeline {
  int world = 0;
  int n_sm = 0;
  // [rank][worker] -> time-ordered, non-overlapping intervals
  std::vector<std::vector<std::vector<Interval>>> workers;

  double l_disp_sim = 0;   // last token arrival (dispatch kernel)
  double l_up_sim = 0;     // last up-GEMM tile completion
  double l_down_sim = 0;   // last down-GEMM tile completion (combine kernel)
  double l_comb_sim = 0;   // last combine transfer arrival
  double l_total_sim = 0;  // makespan
  double stall_comp = 0;
  double stall_comm = 0;
  double stall_reduce = 0;
  double total_stall = 0;
  std::map<std::string, double> role_busy;  // SM*seconds per role

  // scoreboard snapshot: [rank] -> flag times, layout [token seg | tile seg]
  std::vector<std::vector<double>> token_flag_time;
  std::vector<std::vector<double>> tile_flag_time;
  std::vector<std::vector<double>> comp_start_time;  // per tile

  // combine kernel only: arrival time of each (token, k) replica, [rank][n_tok*topk]
  std::vector<std::vector<double>> replica_arrival;

  std::uint64_t content_hash() const;
};

struct SimParams {
  HardwareSpec spec;
  MoEShape shape;
  TuneConfig cfg;
  RoutingInstance routing;
  bool naive_order = false;  // send in source-token order instead of expert priority
};

// Exposed for tests: per-rank task layout of the dispatch kernel
// (n_comm = n_disp slices of the send schedule, n_relay tile ranges,
// one comp task per GEMM tile).
TaskQueueInfo build_task_list(const MoEShape& shape, const TuneConfig& cfg,
                              const RoutingInstance& routing, int rank);

SimTimeline run_dispatch_gemm_sim(const SimParams& params);
SimTimeline run_gemm_combine_sim(const SimParams& params);

// {prioritized, naive}
std::pair<SimTimeline, SimTimeline> priority_ablation(const SimParams& params);

}  // namespace eplab
