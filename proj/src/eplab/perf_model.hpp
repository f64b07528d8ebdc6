// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "eplab/traffic.hpp"
#include "eplab/types.hpp"

namespace eplab {

// How the compute residual is charged in stage 1 when computation outlives
// communication. AsPrinted multiplies the residual by n_sm/N_comp1;
// Redistributed spreads the leftover tile work over all SMs once the
// communication workers have transitioned to compute (N_comp1/n_sm).
enum class ResidualScaling { AsPrinted, Redistributed };

struct LatencyBreakdown {
  double t_up = 0;
  double t_down = 0;
  double l_swiglu = 0;
  double l_disp = 0;
  double l_up = 0;
  double l_comb = 0;
  double l_down = 0;
  double t_red = 0;  // one SM reducing the full top-k read volume
  double l_s1 = 0;
  double l_s2 = 0;
  double l_total = 0;
  long long n_tiles_up = 0;
  long long n_tiles_down = 0;
  double w_gap = 0;  // SM*seconds of slack between GEMM and combine
  double w_red = 0;  // SM*seconds of reduce work
  double w_rem = 0;  // SM*seconds of reduce work that spills past the gap
};

// min(n*w*beta/w_sat, beta)
double effective_bandwidth(int n_sm_active, int w, double beta, double w_sat);

// Per-tile GEMM time with the warp-dependent MFU plus the sync overhead.
double calc_gemm_block_time(const HardwareSpec& spec, const MoEShape& shape, long long k_dim,
                            int w);

double calc_swiglu(const MoEShape& shape, const HardwareSpec& spec, long long expanded_tokens);

double calc_disp_lat(const TrafficReport& traffic, const HardwareSpec& spec,
                     const TuneConfig& cfg);

// waves * t_block
double calc_comp_lat(long long n_tiles, double t_block, int n_comp_sms);

// returns {l_comb, t_red}
std::pair<double, double> calc_comb_lat(const TrafficReport& traffic, const HardwareSpec& spec,
                                        const TuneConfig& cfg);

// GEMM tile counts under the balanced per-expert split. The up projection
// is the fused gate+up (output width 2*h_inter); down outputs h_dim.
long long tiles_up(const MoEShape& shape, int world);
long long tiles_down(const MoEShape& shape, int world);

LatencyBreakdown predict_latency(const MoEShape& shape, const HardwareSpec& spec,
                                 const TuneConfig& cfg, const TrafficReport& traffic,
                                 ResidualScaling mode = ResidualScaling::AsPrinted);

}  // namespace eplab
