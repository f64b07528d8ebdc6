// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "eplab/perf_model.hpp"

using namespace eplab;

namespace {

HardwareSpec cluster1() {
  HardwareSpec s;
  s.name = "cluster1";
  s.n_sm = 132;
  s.p_peak = 989e12;
  s.bw_hbm = 3.35e12;
  s.bw_nvl = 200e9;
  s.w_sat = 1024;
  s.tau_sync = 2e-6;
  s.world_size = 8;
  return s;
}

MoEShape moe1() {
  MoEShape s;
  s.name = "moe1";
  s.h_dim = 2048;
  s.h_inter = 1408;
  s.n_exp = 64;
  s.topk = 6;
  s.n_tok = 32768;
  s.s_tok = 4096;
  return s;
}

}  // namespace

TEST_CASE("effective_bandwidth") {
  CHECK(effective_bandwidth(12, 32, 200e9, 1024) == doctest::Approx(75e9));
  CHECK(effective_bandwidth(32, 32, 200e9, 1024) == doctest::Approx(200e9));  // saturation cap
  CHECK(effective_bandwidth(64, 32, 200e9, 1024) == doctest::Approx(200e9));
  CHECK(effective_bandwidth(0, 32, 200e9, 1024) == 0.0);
}

TEST_CASE("calc_gemm_block_time: worked example and mu monotonicity") {
  MoEShape s = moe1();
  // 2*128*256*2048 / (989e12 * 0.6/132) + 2e-6
  CHECK(calc_gemm_block_time(cluster1(), s, 2048, 32) ==
        doctest::Approx(3.1856319676440844e-05).epsilon(1e-12));
  // zero-FLOP tile costs exactly tau_sync
  CHECK(calc_gemm_block_time(cluster1(), s, 0, 32) == doctest::Approx(2e-6));
  // mu(8)=0.7 beats mu(32)=0.6 for the same K
  CHECK(calc_gemm_block_time(cluster1(), s, 2048, 8) < calc_gemm_block_time(cluster1(), s, 2048, 32));
  CHECK_THROWS_AS(calc_gemm_block_time(cluster1(), s, 2048, 7), ValidationError);
}

TEST_CASE("calc_swiglu") {
  MoEShape s = moe1();
  s.h_inter = 1024;  // s_tok_inter = 4096 B
  CHECK(calc_swiglu(s, cluster1(), 32768) == doctest::Approx(8.012998686567164e-05).epsilon(1e-12));
  CHECK(calc_swiglu(s, cluster1(), 0) == 0.0);
  HardwareSpec fast = cluster1();
  fast.bw_hbm *= 2;
  CHECK(calc_swiglu(s, fast, 32768) == doctest::Approx(calc_swiglu(s, cluster1(), 32768) / 2));
}

TEST_CASE("calc_disp_lat") {
  HardwareSpec h = cluster1();
  TuneConfig cfg{12, 5, 20, 33, 32};
  TrafficReport t;
  t.v_megakernel_nvl = 84.0 * 1024 * 1024;
  t.v_megakernel_hbm = 0;
  t.v_alltoall = t.v_megakernel_nvl;
  // pure NVLink term: 84 MiB / 75 GB/s
  CHECK(calc_disp_lat(t, h, cfg) == doctest::Approx(0.00117440512).epsilon(1e-12));
  // saturated dispatch lower bound
  TuneConfig sat = cfg;
  sat.n_disp = 64;
  CHECK(calc_disp_lat(t, h, sat) == doctest::Approx(t.v_megakernel_nvl / 200e9));
  // zero bandwidth with nonzero volume
  TuneConfig zero = cfg;
  zero.n_relay = 0;
  TrafficReport t2 = t;
  t2.v_megakernel_hbm = 1024;
  CHECK_THROWS_AS(calc_disp_lat(t2, h, zero), ValidationError);
}

TEST_CASE("calc_comp_lat wave quantization") {
  CHECK(calc_comp_lat(264, 1e-5, 132) == doctest::Approx(2e-5));
  CHECK(calc_comp_lat(133, 1e-5, 132) == doctest::Approx(2e-5));
  CHECK(calc_comp_lat(0, 1e-5, 132) == 0.0);
  CHECK_THROWS_AS(calc_comp_lat(10, 1e-5, 0), ValidationError);
}

TEST_CASE("calc_comb_lat") {
  HardwareSpec h = cluster1();
  TuneConfig cfg{12, 5, 20, 33, 32};
  TrafficReport t;
  t.v_megakernel_nvl = 1e8;
  t.v_alltoall = 8e8;
  auto [l_comb, t_red] = calc_comb_lat(t, h, cfg);
  CHECK(l_comb == doctest::Approx(1e8 / effective_bandwidth(20, 32, 200e9, 1024)));
  // one SM, w=32: B = 32/1024 * 3.35e12
  CHECK(t_red == doctest::Approx(8e8 / (32.0 / 1024 * 3.35e12)));
  TrafficReport zero;
  auto [lc0, tr0] = calc_comb_lat(zero, h, cfg);
  CHECK(lc0 == 0.0);
  CHECK(tr0 == 0.0);
}

TEST_CASE("predict_latency: frozen spreadsheet-style re-derivation (moe1/cluster1/32k)") {
  HardwareSpec h = cluster1();
  MoEShape s = moe1();
  TuneConfig cfg{12, 5, 20, 33, 32};
  TrafficReport t = volume_expected(s, h);
  CHECK(t.v_allgather == doctest::Approx(1073741824.0));
  CHECK(t.v_alltoall == doctest::Approx(805306368.0));
  CHECK(t.v_megakernel_nvl == doctest::Approx(591851520.0).epsilon(1e-12));
  CHECK(t.v_megakernel_hbm == doctest::Approx(213454848.0).epsilon(1e-12));

  LatencyBreakdown b = predict_latency(s, h, cfg, t);
  CHECK(b.t_up == doctest::Approx(3.185631967644085e-05).epsilon(1e-12));
  CHECK(b.t_down == doctest::Approx(2.2526219777553088e-05).epsilon(1e-12));
  CHECK(b.n_tiles_up == 16896);
  CHECK(b.n_tiles_down == 12288);
  CHECK(b.l_swiglu == doctest::Approx(0.000661072391641791).epsilon(1e-12));
  CHECK(b.l_disp == doctest::Approx(0.008299147936477612).epsilon(1e-12));
  CHECK(b.l_up == doctest::Approx(0.00449174107437816).epsilon(1e-12));
  CHECK(b.l_s1 == doctest::Approx(0.008331004256154052).epsilon(1e-12));  // comm-bound branch
  CHECK(b.l_comb == doctest::Approx(0.00473481216).epsilon(1e-12));
  CHECK(b.t_red == doctest::Approx(0.007692478739104477).epsilon(1e-12));
  CHECK(b.l_down == doctest::Approx(0.0024778841755308395).epsilon(1e-12));
  CHECK(b.w_gap == doctest::Approx(0.25277593426054595).epsilon(1e-12));
  CHECK(b.w_rem == 0.0);
  CHECK(b.l_s2 == doctest::Approx(0.00473481216).epsilon(1e-12));
  CHECK(b.l_total == doctest::Approx(0.013726888807795844).epsilon(1e-12));
}

TEST_CASE("predict_latency: comm-bound branch is exactly l_disp + t_up") {
  HardwareSpec h = cluster1();
  MoEShape s = moe1();
  TuneConfig cfg{4, 1, 20, 1, 32};  // tiny n_disp: dispatch dominates
  TrafficReport t = volume_expected(s, h);
  LatencyBreakdown b = predict_latency(s, h, cfg, t);
  REQUIRE(b.l_disp >= b.l_up);
  CHECK(b.l_s1 == doctest::Approx(b.l_disp + b.t_up).epsilon(1e-15));
}

TEST_CASE("predict_latency: reduction hidden in the gap leaves l_s2 at the base") {
  HardwareSpec h = cluster1();
  MoEShape s = moe1();
  TrafficReport t = volume_expected(s, h);
  LatencyBreakdown b = predict_latency(s, h, TuneConfig{12, 5, 20, 132, 32}, t);
  REQUIRE(b.w_red <= b.w_gap);
  CHECK(b.l_s2 == doctest::Approx(std::max(b.l_down, b.l_comb)));
}

TEST_CASE("predict_latency: compute-bound branch scaling, both modes") {
  HardwareSpec h = cluster1();
  MoEShape s = moe1();
  TuneConfig cfg{64, 5, 20, 33, 32};
  TrafficReport t = volume_expected(s, h);
  LatencyBreakdown printed = predict_latency(s, h, cfg, t, ResidualScaling::AsPrinted);
  LatencyBreakdown redis = predict_latency(s, h, cfg, t, ResidualScaling::Redistributed);
  REQUIRE(printed.l_up > printed.l_disp);
  int n_comp1 = h.n_sm - cfg.n_disp;
  CHECK(printed.l_s1 == doctest::Approx(printed.l_disp + (printed.l_up - printed.l_disp) *
                                                             (double)h.n_sm / n_comp1));
  CHECK(redis.l_s1 == doctest::Approx(redis.l_disp + (redis.l_up - redis.l_disp) *
                                                         (double)n_comp1 / h.n_sm));
}

TEST_CASE("monotonicity: faster NVLink never hurts; more tiles never help") {
  HardwareSpec h = cluster1();
  MoEShape s = moe1();
  TuneConfig cfg{12, 5, 20, 33, 32};
  TrafficReport t = volume_expected(s, h);
  HardwareSpec h2 = h;
  h2.bw_nvl *= 2;
  TrafficReport t2 = volume_expected(s, h2);
  LatencyBreakdown a = predict_latency(s, h, cfg, t);
  LatencyBreakdown b = predict_latency(s, h2, cfg, t2);
  CHECK(b.l_disp <= a.l_disp);
  CHECK(b.l_comb <= a.l_comb);
  CHECK(calc_comp_lat(100, 1e-5, 16) <= calc_comp_lat(101, 1e-5, 16));
}

TEST_CASE("conservation: gap, reduce work and remainder are nonnegative") {
  HardwareSpec h = cluster1();
  MoEShape s = moe1();
  TrafficReport t = volume_expected(s, h);
  for (int nd : {4, 16, 64, 120}) {
    for (int nc : {4, 20, 64, 128}) {
      LatencyBreakdown b = predict_latency(s, h, TuneConfig{nd, 1, nc, 17, 16}, t);
      CHECK(b.w_gap >= 0);
      CHECK(b.w_red >= 0);
      CHECK(b.w_rem >= 0);
      CHECK(b.l_s2 >= std::max(b.l_down, b.l_comb));
      CHECK(b.l_total == doctest::Approx(b.l_s1 + b.l_s2 + b.l_swiglu));
    }
  }
}
