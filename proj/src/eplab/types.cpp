// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/types.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace eplab {

namespace {

void fail(const std::string& field, const std::string& why) {
  throw ValidationError(field + " " + why);
}

}  // namespace

HardwareSpec validate_hardware(HardwareSpec spec) {
  if (spec.n_sm < 2) fail("n_sm", "must be >= 2");
  if (!(spec.p_peak > 0)) fail("p_peak", "must be > 0");
  if (!(spec.bw_hbm > 0)) fail("bw_hbm", "must be > 0");
  if (!(spec.bw_nvl > 0)) fail("bw_nvl", "must be > 0");
  if (!(spec.w_sat > 0)) fail("w_sat", "must be > 0");
  if (!(spec.tau_sync >= 0)) fail("tau_sync", "must be >= 0");
  if (spec.world_size < 1) fail("world_size", "must be >= 1");
  return spec;
}

std::pair<MoEShape, HardwareSpec> validate_shape(MoEShape shape, HardwareSpec spec) {
  spec = validate_hardware(std::move(spec));
  if (shape.h_dim <= 0) fail("h_dim", "must be > 0");
  if (shape.h_inter <= 0) fail("h_inter", "must be > 0");
  if (shape.n_exp <= 0) fail("n_exp", "must be > 0");
  if (shape.n_exp % spec.world_size != 0) {
    std::ostringstream os;
    os << "n_exp " << shape.n_exp << " not divisible by world_size " << spec.world_size;
    throw ValidationError(os.str());
  }
  if (shape.topk < 1 || shape.topk > shape.n_exp) fail("topk", "must be in [1, n_exp]");
  if (shape.n_tok < 0) fail("n_tok", "must be >= 0");
  if (shape.s_tok < 0) fail("s_tok", "must be >= 0");
  if (shape.s_tok == 0) shape.s_tok = 2LL * shape.h_dim;
  if (shape.b_m <= 0) fail("b_m", "must be > 0");
  if (shape.b_n <= 0) fail("b_n", "must be > 0");
  if (shape.mu_table.empty()) fail("mu_table", "must not be empty");
  for (const auto& [w, mu] : shape.mu_table) {
    if (w <= 0) fail("mu_table", "warp keys must be > 0");
    if (!(mu > 0.0 && mu <= 1.0)) fail("mu_table", "values must be in (0,1]");
  }
  return {std::move(shape), std::move(spec)};
}

void validate_tune_config(const TuneConfig& cfg, const HardwareSpec& spec) {
  if (cfg.w != 8 && cfg.w != 16 && cfg.w != 32) fail("w", "must be one of {8,16,32}");
  if (cfg.n_disp < 0) fail("n_disp", "must be >= 0");
  if (cfg.n_relay < 0) fail("n_relay", "must be >= 0");
  if (cfg.n_disp + cfg.n_relay >= spec.n_sm) {
    std::ostringstream os;
    os << "n_disp + n_relay must be < n_sm (deadlock constraint): " << cfg.n_disp << " + "
       << cfg.n_relay << " >= " << spec.n_sm;
    throw ValidationError(os.str());
  }
  if (cfg.n_comb >= spec.n_sm || cfg.n_comb < 1) fail("n_comb", "must be in [1, n_sm)");
  if (cfg.n_red < 1 || cfg.n_red > spec.n_sm) fail("n_red", "must be in [1, n_sm]");
}

long long derive_expanded_tokens(const MoEShape& shape, int world) {
  (void)world;  // balanced routing: received per rank == sent per rank
  return shape.n_tok * shape.topk;
}

void validate_routing(const RoutingInstance& routing) {
  if (routing.world < 1) fail("world", "must be >= 1");
  if ((int)routing.selected_experts.size() != routing.world ||
      (int)routing.gate_weights.size() != routing.world)
    fail("routing", "rank table count != world");
  for (int r = 0; r < routing.world; ++r) {
    const auto& sel = routing.selected_experts[r];
    const auto& gw = routing.gate_weights[r];
    if ((long long)sel.size() != routing.n_tok * routing.topk) fail("selected_experts", "bad shape");
    if (gw.size() != sel.size()) fail("gate_weights", "bad shape");
    for (long long t = 0; t < routing.n_tok; ++t) {
      std::set<int> seen;
      for (int j = 0; j < routing.topk; ++j) {
        int e = sel[t * routing.topk + j];
        if (e < 0 || e >= routing.n_exp) fail("selected_experts", "expert id out of range");
        if (!seen.insert(e).second) fail("selected_experts", "duplicate expert within token");
        if (!std::isfinite(gw[t * routing.topk + j])) fail("gate_weights", "non-finite weight");
      }
    }
  }
}

}  // namespace eplab
