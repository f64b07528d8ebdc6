// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eplab/error.hpp"

namespace eplab {

/// Cluster / GPU description feeding the performance model and simulator.
struct HardwareSpec {
  std::string name;       // fixture id, e.g. "cluster1"
  int n_sm = 0;           // streaming multiprocessors per GPU
  double p_peak = 0;      // peak BF16 compute, FLOP/s
  double bw_hbm = 0;      // HBM bandwidth, B/s
  double bw_nvl = 0;      // NVLink unidirectional bandwidth, B/s
  double w_sat = 1024;    // warps to saturate a link
  double tau_sync = 2e-6; // per-tile synchronization overhead, s
  int world_size = 1;     // ranks participating in EP
};

/// MoE model geometry. s_tok defaults to 2*h_dim (bf16 rows).
struct MoEShape {
  std::string name;
  int h_dim = 0;
  int h_inter = 0;
  int n_exp = 0;
  int topk = 0;
  long long n_tok = 0;  // tokens per rank, pre-dispatch
  long long s_tok = 0;  // bytes per token row; 0 = derive 2*h_dim
  int b_m = 128;        // GEMM block rows
  int b_n = 256;        // GEMM block cols
  std::map<int, double> mu_table = {{8, 0.7}, {16, 0.65}, {32, 0.6}};

  long long token_bytes() const { return s_tok > 0 ? s_tok : 2LL * h_dim; }
  int experts_per_rank(int world) const { return n_exp / world; }
};

/// Point in the tuner's optimization space.
struct TuneConfig {
  int n_disp = 0;   // SMs for dispatch Comm-Workers
  int n_relay = 0;  // SMs for Relay Workers
  int n_comb = 0;   // SMs for combine Comm-Workers
  int n_red = 0;    // SMs for Reduce Workers
  int w = 0;        // warps per worker

  bool operator==(const TuneConfig&) const = default;
};

/// Per-rank routing decisions: [n_tok, topk] expert ids and gate weights.
struct RoutingInstance {
  int world = 0;
  int n_exp = 0;
  int topk = 0;
  long long n_tok = 0;
  std::uint64_t seed = 0;
  // flattened [n_tok*topk] per rank
  std::vector<std::vector<int>> selected_experts;
  std::vector<std::vector<float>> gate_weights;

  int expert_at(int rank, long long t, int j) const {
    return selected_experts[rank][t * topk + j];
  }
  float weight_at(int rank, long long t, int j) const {
    return gate_weights[rank][t * topk + j];
  }
};

HardwareSpec validate_hardware(HardwareSpec spec);
std::pair<MoEShape, HardwareSpec> validate_shape(MoEShape shape, HardwareSpec spec);
void validate_tune_config(const TuneConfig& cfg, const HardwareSpec& spec);

// Post-dispatch token count per rank under balanced routing.
long long derive_expanded_tokens(const MoEShape& shape, int world);

// Checks the RoutingInstance type invariants; throws ValidationError.
void validate_routing(const RoutingInstance& routing);

}  // namespace eplab
