// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/perf_model.hpp"

#include <algorithm>
#include <cmath>

namespace eplab {

double effective_bandwidth(int n_sm_active, int w, double beta, double w_sat) {
  if (n_sm_active <= 0) return 0.0;
  return std::min((double)n_sm_active * w * beta / w_sat, beta);
}

double calc_gemm_block_time(const HardwareSpec& spec, const MoEShape& shape, long long k_dim,
                            int w) {
  auto it = shape.mu_table.find(w);
  if (it == shape.mu_table.end()) throw ValidationError("mu_table has no entry for w");
  double mu = it->second;
  double flops = 2.0 * shape.b_m * shape.b_n * (double)k_dim;
  return flops / (spec.p_peak * (mu / spec.n_sm)) + spec.tau_sync;
}

double calc_swiglu(const MoEShape& shape, const HardwareSpec& spec, long long expanded_tokens) {
  // intermediate activation row: gate+up halves, bf16
  double s_tok_inter = 2.0 * shape.h_inter * 2.0;
  return 2.0 * (double)expanded_tokens * s_tok_inter / spec.bw_hbm;
}

double calc_disp_lat(const TrafficReport& traffic, const HardwareSpec& spec,
                     const TuneConfig& cfg) {
  double l = 0;
  if (traffic.v_megakernel_nvl > 0) {
    double b = effective_bandwidth(cfg.n_disp, cfg.w, spec.bw_nvl, spec.w_sat);
    if (b <= 0) throw ValidationError("zero effective NVLink bandwidth with nonzero volume");
    l += traffic.v_megakernel_nvl / b;
  }
  if (traffic.v_megakernel_hbm > 0) {
    double b = effective_bandwidth(cfg.n_relay, cfg.w, spec.bw_hbm, spec.w_sat);
    if (b <= 0) throw ValidationError("zero effective HBM bandwidth with nonzero volume");
    l += traffic.v_megakernel_hbm / b;
  }
  return l;
}

double calc_comp_lat(long long n_tiles, double t_block, int n_comp_sms) {
  if (n_comp_sms <= 0) throw ValidationError("n_comp_sms must be >= 1");
  if (n_tiles <= 0) return 0.0;
  long long waves = (n_tiles + n_comp_sms - 1) / n_comp_sms;
  return (double)waves * t_block;
}

std::pair<double, double> calc_comb_lat(const TrafficReport& traffic, const HardwareSpec& spec,
                                        const TuneConfig& cfg) {
  double l_comb = 0;
  if (traffic.v_megakernel_nvl > 0) {
    double b = effective_bandwidth(cfg.n_comb, cfg.w, spec.bw_nvl, spec.w_sat);
    if (b <= 0) throw ValidationError("zero effective NVLink bandwidth with nonzero volume");
    l_comb = traffic.v_megakernel_nvl / b;
  }
  // full top-k reduction read volume = expanded_tokens * s_tok = v_alltoall
  double t_red = 0;
  if (traffic.v_alltoall > 0) {
    double b1 = effective_bandwidth(1, cfg.w, spec.bw_hbm, spec.w_sat);
    if (b1 <= 0) throw ValidationError("zero effective HBM bandwidth with nonzero volume");
    t_red = traffic.v_alltoall / b1;
  }
  return {l_comb, t_red};
}

namespace {

long long tiles_for(const MoEShape& shape, int world, long long n_out) {
  long long expanded = shape.n_tok * shape.topk;
  if (expanded == 0) return 0;
  long long epr = shape.experts_per_rank(world);
  long long m_e = (expanded + epr - 1) / epr;  // balanced share, rounded up
  long long row_groups = (m_e + shape.b_m - 1) / shape.b_m;
  long long col_tiles = (n_out + shape.b_n - 1) / shape.b_n;
  return epr * row_groups * col_tiles;
}

}  // namespace

long long tiles_up(const MoEShape& shape, int world) {
  return tiles_for(shape, world, 2LL * shape.h_inter);
}

long long tiles_down(const MoEShape& shape, int world) {
  return tiles_for(shape, world, shape.h_dim);
}

LatencyBreakdown predict_latency(const MoEShape& shape, const HardwareSpec& spec,
                                 const TuneConfig& cfg, const TrafficReport& traffic,
                                 ResidualScaling mode) {
  LatencyBreakdown b;
  const long long expanded = shape.n_tok * shape.topk;

  b.t_up = calc_gemm_block_time(spec, shape, shape.h_dim, cfg.w);
  b.t_down = calc_gemm_block_time(spec, shape, shape.h_inter, cfg.w);
  b.l_swiglu = calc_swiglu(shape, spec, expanded);
  b.n_tiles_up = tiles_up(shape, spec.world_size);
  b.n_tiles_down = tiles_down(shape, spec.world_size);

  // stage 1: dispatch overlapped with the up GEMM
  int n_comp1 = spec.n_sm - cfg.n_disp;
  if (n_comp1 <= 0) throw ValidationError("n_disp leaves no compute SMs");
  b.l_disp = calc_disp_lat(traffic, spec, cfg);
  b.l_up = calc_comp_lat(b.n_tiles_up, b.t_up, n_comp1);
  if (b.l_up > b.l_disp) {
    double scale = mode == ResidualScaling::AsPrinted ? (double)spec.n_sm / n_comp1
                                                      : (double)n_comp1 / spec.n_sm;
    b.l_s1 = b.l_disp + (b.l_up - b.l_disp) * scale;
  } else {
    b.l_s1 = b.l_disp + b.t_up;
  }

  // stage 2: down GEMM overlapped with combine, reduce fills the gap
  int n_comp2 = spec.n_sm - cfg.n_comb;
  if (n_comp2 <= 0) throw ValidationError("n_comb leaves no compute SMs");
  auto [l_comb, t_red] = calc_comb_lat(traffic, spec, cfg);
  b.l_comb = l_comb;
  b.t_red = t_red;
  b.l_down = calc_comp_lat(b.n_tiles_down, b.t_down, n_comp2);
  double l_base = std::max(b.l_down, b.l_comb);
  b.w_gap = std::abs(b.l_down - b.l_comb) * n_comp2;
  // total reduce work: n_red workers, each t_red/n_red for its token share
  b.w_red = b.t_red;
  b.w_rem = std::max(0.0, b.w_red - b.w_gap);
  b.l_s2 = l_base + b.w_rem / spec.n_sm;

  b.l_total = b.l_s1 + b.l_s2 + b.l_swiglu;
  return b;
}

}  // namespace eplab
