// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0
//
// eplab: expert-parallelism laboratory. Deterministic token mapping,
// relay-multicast traffic analytics, an analytical latency model with an
// exhaustive config tuner, discrete-event MegaKernel simulators, and a
// softfloat reduction lab, behind one subcommand-style binary.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "eplab/config.hpp"
#include "eplab/perf_model.hpp"
#include "eplab/precision.hpp"
#include "eplab/routing.hpp"
#include "eplab/sim.hpp"
#include "eplab/token_map.hpp"
#include "eplab/trace.hpp"
#include "eplab/traffic.hpp"
#include "eplab/tuner.hpp"
#include "eplab/version.hpp"

using nlohmann::json;
using namespace eplab;

namespace {

struct Manifest {
  std::string subcommand;
  json inputs = json::object();
  json seeds = json::object();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  json finish() const {
    json m;
    m["tool"] = "eplab";
    m["version"] = kVersion;
    m["subcommand"] = subcommand;
    m["inputs"] = inputs;
    m["seeds"] = seeds;
    m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }
};

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << j.dump(2) << "\n";
}

TuneConfig parse_config_tuple(const std::string& text) {
  TuneConfig cfg;
  if (std::sscanf(text.c_str(), "%d,%d,%d,%d,%d", &cfg.n_disp, &cfg.n_relay, &cfg.n_comb,
                  &cfg.n_red, &cfg.w) != 5)
    throw ValidationError("--config expects \"n_disp,n_relay,n_comb,n_red,w\"");
  return cfg;
}

json config_json(const TuneConfig& c) {
  return {{"n_disp", c.n_disp},
          {"n_relay", c.n_relay},
          {"n_comb", c.n_comb},
          {"n_red", c.n_red},
          {"w", c.w}};
}

json breakdown_json(const LatencyBreakdown& b) {
  return {{"t_up", b.t_up},       {"t_down", b.t_down},   {"l_swiglu", b.l_swiglu},
          {"l_disp", b.l_disp},   {"l_up", b.l_up},       {"l_comb", b.l_comb},
          {"l_down", b.l_down},   {"t_red", b.t_red},     {"l_s1", b.l_s1},
          {"l_s2", b.l_s2},       {"l_total", b.l_total}, {"n_tiles_up", b.n_tiles_up},
          {"n_tiles_down", b.n_tiles_down},               {"w_gap", b.w_gap},
          {"w_red", b.w_red},     {"w_rem", b.w_rem}};
}

ResidualScaling parse_scaling(const std::string& s) {
  if (s == "printed") return ResidualScaling::AsPrinted;
  if (s == "redistribute") return ResidualScaling::Redistributed;
  throw ValidationError("--scaling must be printed or redistribute");
}

SelfRankAccounting parse_accounting(const std::string& s) {
  if (s == "table1") return SelfRankAccounting::IncludeSelf;
  if (s == "remote") return SelfRankAccounting::RemoteOnly;
  throw ValidationError("--accounting must be table1 or remote");
}

// ---------------------------------------------------------------------------

int cmd_traffic(int world, int topk, const std::string& json_path) {
  Manifest man;
  man.subcommand = "traffic";
  man.inputs = {{"world", world}, {"topk", topk}};
  auto d = distinct_rank_distribution(world, topk);
  std::printf("distinct destination ranks, world=%d topk=%d\n", world, topk);
  std::printf("%8s %12s %14s   formula\n", "X", "saved", "P(X)");
  for (int x = 1; x <= (int)d.probs.size(); ++x) {
    std::printf("%8d %12d %14.6g   C(%d,%d)*%d!*S2(%d,%d)/%d^%d\n", x, topk - x, d.prob(x), world,
                x, x, topk, x, world, topk);
  }
  std::printf("E[X] = %.6f\n", d.expectation);
  std::printf("expected saving fraction = %.6f\n", d.expected_saving_fraction);

  if (!json_path.empty()) {
    json rows = json::array();
    for (int x = 1; x <= (int)d.probs.size(); ++x)
      rows.push_back({{"x", x},
                      {"saved_sends", topk - x},
                      {"probability", d.prob(x)},
                      {"numerator", d.numerators[x - 1].str()},
                      {"denominator", d.denominator.str()}});
    json out;
    out["manifest"] = man.finish();
    out["rows"] = rows;
    out["expectation"] = d.expectation;
    out["expected_saving_fraction"] = d.expected_saving_fraction;
    write_json(json_path, out);
  }
  return 0;
}

int cmd_predict(const std::string& hw_path, const std::string& shape_path,
                const std::string& cfg_text, long long tokens, const std::string& scaling,
                const std::string& accounting, const std::string& json_path) {
  Manifest man;
  man.subcommand = "predict";
  man.inputs = {{"hardware", hw_path}, {"shape", shape_path}, {"config", cfg_text}};
  HardwareSpec hw = parse_hardware_file(hw_path);
  MoEShape shape = parse_shape_file(shape_path);
  if (tokens > 0) shape.n_tok = tokens;
  auto [s, h] = validate_shape(shape, hw);
  TuneConfig cfg = parse_config_tuple(cfg_text);
  validate_tune_config(cfg, h);
  TrafficReport traffic = volume_expected(s, h, parse_accounting(accounting));
  LatencyBreakdown b = predict_latency(s, h, cfg, traffic, parse_scaling(scaling));

  std::printf("latency prediction (%s on %s, n_tok=%lld)\n", s.name.c_str(), h.name.c_str(),
              (long long)s.n_tok);
  auto row = [](const char* k, double v) { std::printf("  %-12s %14.6e s\n", k, v); };
  row("t_up", b.t_up);
  row("t_down", b.t_down);
  row("l_disp", b.l_disp);
  row("l_up", b.l_up);
  row("l_s1", b.l_s1);
  row("l_comb", b.l_comb);
  row("l_down", b.l_down);
  row("t_red", b.t_red);
  row("l_s2", b.l_s2);
  row("l_swiglu", b.l_swiglu);
  row("l_total", b.l_total);
  std::printf("  %-12s %14lld\n", "tiles_up", b.n_tiles_up);
  std::printf("  %-12s %14lld\n", "tiles_down", b.n_tiles_down);

  if (!json_path.empty()) {
    json out;
    out["manifest"] = man.finish();
    out["config"] = config_json(cfg);
    out["breakdown"] = breakdown_json(b);
    write_json(json_path, out);
  }
  return 0;
}

int cmd_tune(const std::string& hw_path, const std::string& shape_path, long long tokens,
             const std::string& cache_path, int workers, const std::string& scaling,
             const std::string& json_path) {
  Manifest man;
  man.subcommand = "tune";
  man.inputs = {{"hardware", hw_path}, {"shape", shape_path}, {"tokens", tokens}};
  HardwareSpec hw = parse_hardware_file(hw_path);
  MoEShape shape = parse_shape_file(shape_path);
  if (tokens > 0) shape.n_tok = tokens;
  if (shape.n_tok < 1) throw ValidationError("tokens must be >= 1");
  auto [s, h] = validate_shape(shape, hw);

  TuneResult res;
  long long feasible = 0;
  SearchSpace space = enumerate_space(h, s);
  for_each_candidate(space, true, [&](const TuneConfig&) { ++feasible; });
  if (!cache_path.empty()) {
    TuneCache cache;
    cache.load(cache_path);
    res = cache.lookup(h, s, s.n_tok, workers, parse_scaling(scaling));
    cache.save(cache_path);
  } else {
    TrafficReport traffic = volume_expected(s, h);
    res = search(h, s, traffic, workers, parse_scaling(scaling));
  }

  std::printf("search space: raw grid %lld (dependent grid %lld, feasible %lld)\n",
              space.raw_grid_size, space.enumerated_count, feasible);
  std::printf("evaluated %lld configs in %.3f s\n", res.evaluated, res.wall_seconds);
  std::printf("best config: n_disp=%d n_relay=%d n_comb=%d n_red=%d w=%d\n", res.best.n_disp,
              res.best.n_relay, res.best.n_comb, res.best.n_red, res.best.w);
  std::printf("predicted latency: %.6e s\n", res.l_min);

  if (!json_path.empty()) {
    json out;
    out["manifest"] = man.finish();
    out["raw_grid_size"] = space.raw_grid_size;
    out["enumerated_count"] = space.enumerated_count;
    out["feasible_count"] = feasible;
    out["evaluated"] = res.evaluated;
    out["wall_seconds"] = res.wall_seconds;
    out["best"] = config_json(res.best);
    out["l_min"] = res.l_min;
    out["breakdown"] = breakdown_json(res.breakdown);
    write_json(json_path, out);
  }
  return 0;
}

int cmd_simulate(const std::string& hw_path, const std::string& shape_path,
                 const std::string& cfg_text, bool auto_tune, long long tokens,
                 std::uint64_t seed, const std::string& trace_prefix, bool naive, bool force,
                 const std::string& scaling, const std::string& json_path) {
  Manifest man;
  man.subcommand = "simulate";
  man.inputs = {{"hardware", hw_path}, {"shape", shape_path}, {"auto", auto_tune}};
  man.seeds = {{"routing", seed}};
  HardwareSpec hw = parse_hardware_file(hw_path);
  MoEShape shape = parse_shape_file(shape_path);
  if (tokens > 0) shape.n_tok = tokens;
  auto [s, h] = validate_shape(shape, hw);
  TrafficReport traffic = volume_expected(s, h);

  TuneConfig cfg;
  if (auto_tune) {
    cfg = search(h, s, traffic, 0, parse_scaling(scaling)).best;
  } else {
    if (cfg_text.empty()) throw ValidationError("either --config or --auto is required");
    cfg = parse_config_tuple(cfg_text);
    if (!force) {
      if (cfg.n_disp + cfg.n_relay >= h.n_sm)
        throw DeadlockError("config violates n_disp + n_relay < n_sm (" +
                            std::to_string(cfg.n_disp) + " + " + std::to_string(cfg.n_relay) +
                            " >= " + std::to_string(h.n_sm) + ")");
      if (cfg.n_comb >= h.n_sm)
        throw DeadlockError("config violates n_comb < n_sm (" + std::to_string(cfg.n_comb) +
                            " >= " + std::to_string(h.n_sm) + ")");
      validate_tune_config(cfg, h);
    }
  }

  RoutingInstance routing = sample_routing(s, h.world_size, seed);
  SimParams params{h, s, cfg, routing, naive};
  SimTimeline disp = run_dispatch_gemm_sim(params);
  SimTimeline comb = run_gemm_combine_sim(params);

  LatencyBreakdown b = predict_latency(s, h, cfg, traffic, parse_scaling(scaling));
  double sim_total = disp.l_total_sim + comb.l_total_sim + b.l_swiglu;
  double rel_err = sim_total > 0 ? (b.l_total - sim_total) / sim_total : 0.0;

  std::printf("config: n_disp=%d n_relay=%d n_comb=%d n_red=%d w=%d\n", cfg.n_disp, cfg.n_relay,
              cfg.n_comb, cfg.n_red, cfg.w);
  std::printf("dispatch+gemm makespan: %.6e s (stall comp %.3e s)\n", disp.l_total_sim,
              disp.stall_comp);
  std::printf("gemm+combine makespan:  %.6e s\n", comb.l_total_sim);
  std::printf("swiglu (model):         %.6e s\n", b.l_swiglu);
  std::printf("simulated total:        %.6e s\n", sim_total);
  std::printf("predicted total:        %.6e s (rel. err %+.2f%%)\n", b.l_total, 100 * rel_err);

  if (!trace_prefix.empty()) {
    emit_trace(disp, trace_prefix + ".dispatch.json");
    emit_trace(comb, trace_prefix + ".combine.json");
    std::printf("traces written to %s.{dispatch,combine}.{json,csv}\n", trace_prefix.c_str());
  }
  if (!json_path.empty()) {
    json out;
    out["manifest"] = man.finish();
    out["config"] = config_json(cfg);
    out["dispatch"] = {{"makespan", disp.l_total_sim},
                       {"l_disp_sim", disp.l_disp_sim},
                       {"l_up_sim", disp.l_up_sim},
                       {"stall_comp", disp.stall_comp}};
    out["combine"] = {{"makespan", comb.l_total_sim},
                      {"l_down_sim", comb.l_down_sim},
                      {"l_comb_sim", comb.l_comb_sim}};
    out["simulated_total"] = sim_total;
    out["predicted_total"] = b.l_total;
    out["relative_error"] = rel_err;
    write_json(json_path, out);
  }
  return 0;
}

int cmd_verify_mapping(int n_seeds, const std::string& json_path) {
  Manifest man;
  man.subcommand = "verify-mapping";
  man.seeds = {{"instances", n_seeds}};
  // brute-force reference: concatenate all ranks' copies in (src, t, j)
  // order and stable-sort by global expert
  auto oracle_check = [](const RoutingInstance& r) {
    struct Copy {
      int expert, src, slot;
      long long token;
    };
    std::vector<Copy> copies;
    for (int rank = 0; rank < r.world; ++rank)
      for (long long t = 0; t < r.n_tok; ++t)
        for (int j = 0; j < r.topk; ++j) copies.push_back({r.expert_at(rank, t, j), rank, j, t});
    std::stable_sort(copies.begin(), copies.end(),
                     [](const Copy& a, const Copy& b) { return a.expert < b.expert; });
    int epr = r.n_exp / r.world;
    std::vector<long long> pos(r.n_exp, 0);
    auto maps = build_global_token_map(r);
    for (const Copy& c : copies) {
      MapEntry want{c.expert / epr, c.expert % epr, pos[c.expert]++};
      if (!(maps[c.src].at(c.token, c.slot) == want)) return false;
    }
    return true;
  };

  int pass = 0;
  std::uint64_t state = 0x9E3779B97F4A7C15ULL;
  auto next = [&]() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return state;
  };
  for (int i = 0; i < n_seeds; ++i) {
    int worlds[] = {2, 4, 8};
    int world = worlds[next() % 3];
    int epr_choices[] = {1, 2, 4, 8};
    int epr = epr_choices[next() % 4];
    int n_exp = std::min(64, world * epr);
    MoEShape s;
    s.h_dim = s.h_inter = 16;
    s.n_exp = n_exp;
    s.topk = 1 + (int)(next() % std::min(8, n_exp));
    s.n_tok = 1 + (long long)(next() % 64);
    RoutingInstance r = sample_routing(s, world, (std::uint64_t)i * 1315423911u + 17);
    if (oracle_check(r)) ++pass;
  }
  std::printf("%d/%d oracle-equal\n", pass, n_seeds);
  if (!json_path.empty()) {
    json out;
    out["manifest"] = man.finish();
    out["pass"] = pass;
    out["total"] = n_seeds;
    write_json(json_path, out);
  }
  return pass == n_seeds ? 0 : 1;
}

int cmd_precision(const std::string& format, const std::string& mode, int n_seeds,
                  const std::string& hw_path, const std::string& shape_path, long long tokens,
                  const std::string& json_path) {
  Manifest man;
  man.subcommand = "precision";
  man.inputs = {{"format", format}, {"mode", mode}};
  man.seeds = {{"count", n_seeds}};
  FpFormat fmt;
  if (format == "bf16") fmt = FpFormat::Bfloat16;
  else if (format == "fp32") fmt = FpFormat::Binary32;
  else throw ValidationError("--format must be bf16 or fp32");

  HardwareSpec hw;
  if (hw_path.empty()) {
    hw.name = "default";
    hw.n_sm = 16;
    hw.p_peak = 1e14;
    hw.bw_hbm = 1e12;
    hw.bw_nvl = 1e11;
    hw.world_size = 8;
  } else {
    hw = parse_hardware_file(hw_path);
  }
  MoEShape shape;
  if (shape_path.empty()) {
    shape.name = "default";
    shape.h_dim = 64;
    shape.h_inter = 64;
    shape.n_exp = 64;
    shape.topk = 8;
    shape.n_tok = 1024;
    shape.b_m = 64;
  } else {
    shape = parse_shape_file(shape_path);
  }
  if (tokens > 0) shape.n_tok = tokens;
  auto [s, h] = validate_shape(shape, hw);
  TuneConfig cfg{2, 1, 2, 2, 8};

  std::printf("%8s %14s %14s\n", "seed", "max_diff", "%non-bitwise");
  double worst = 0;
  long long non_bitwise = 0, elements = 0;
  for (int i = 0; i < n_seeds; ++i) {
    PrecisionReport rep;
    if (mode == "fused") {
      RoutingInstance r = sample_routing(s, h.world_size, (std::uint64_t)i);
      rep = fused_vs_sequential(r, s, h, cfg, (std::uint64_t)i, fmt);
    } else if (mode == "permuted") {
      RoutingInstance r = sample_routing(s, h.world_size, (std::uint64_t)i);
      rep = fused_vs_sequential(r, s, h, cfg, (std::uint64_t)i, fmt, OrderPolicy::Permuted);
    } else if (mode == "split") {
      rep = split_batch_experiment(s, (std::uint64_t)i, fmt);
    } else {
      throw ValidationError("--mode must be fused, permuted or split");
    }
    std::printf("%8d %14.6e %13.4f%%\n", i, rep.max_diff, 100.0 * rep.frac_non_bitwise);
    worst = std::max(worst, rep.max_diff);
    non_bitwise += rep.non_bitwise;
    elements += rep.elements;
  }
  double frac = elements ? (double)non_bitwise / elements : 0.0;
  std::printf("overall: max_diff %.6e, non-bitwise %.4f%%\n", worst, 100.0 * frac);
  if (!json_path.empty()) {
    json out;
    out["manifest"] = man.finish();
    out["max_diff"] = worst;
    out["frac_non_bitwise"] = frac;
    write_json(json_path, out);
  }
  // fused is a correctness check; the controls are demonstrations
  if (mode == "fused" && (worst != 0.0 || non_bitwise != 0)) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eplab: expert-parallelism MegaKernel laboratory"};
  app.require_subcommand(1);

  std::string hw_path, shape_path, cfg_text, cache_path, trace_prefix, json_path;
  std::string format = "bf16", mode = "fused", scaling = "printed", accounting = "table1";
  int world = 8, topk = 8, seeds = 100, workers = 0;
  long long tokens = 0;
  std::uint64_t seed = 0;
  bool auto_tune = false, naive = false, force = false;

  auto* traffic = app.add_subcommand("traffic", "distinct-rank distribution and volumes");
  traffic->add_option("--world", world);
  traffic->add_option("--topk", topk);
  traffic->add_option("--json", json_path);

  auto* predict = app.add_subcommand("predict", "analytical latency breakdown");
  predict->add_option("--hardware", hw_path)->required();
  predict->add_option("--shape", shape_path)->required();
  predict->add_option("--config", cfg_text)->required();
  predict->add_option("--tokens", tokens);
  predict->add_option("--scaling", scaling);
  predict->add_option("--accounting", accounting);
  predict->add_option("--json", json_path);

  auto* tune = app.add_subcommand("tune", "exhaustive config search");
  tune->add_option("--hardware", hw_path)->required();
  tune->add_option("--shape", shape_path)->required();
  tune->add_option("--tokens", tokens);
  tune->add_option("--cache", cache_path);
  tune->add_option("--workers", workers);
  tune->add_option("--scaling", scaling);
  tune->add_option("--json", json_path);

  auto* simulate = app.add_subcommand("simulate", "run both MegaKernel simulations");
  simulate->add_option("--hardware", hw_path)->required();
  simulate->add_option("--shape", shape_path)->required();
  simulate->add_option("--config", cfg_text);
  simulate->add_flag("--auto", auto_tune);
  simulate->add_option("--tokens", tokens);
  simulate->add_option("--seed", seed);
  simulate->add_option("--trace", trace_prefix);
  simulate->add_flag("--naive", naive);
  simulate->add_flag("--force", force, "run constraint-violating configs anyway");
  simulate->add_option("--scaling", scaling);
  simulate->add_option("--json", json_path);

  auto* verify = app.add_subcommand("verify-mapping", "mapping vs brute-force oracle");
  verify->add_option("--seeds", seeds);
  verify->add_option("--json", json_path);

  auto* precision = app.add_subcommand("precision", "softfloat reduction experiments");
  precision->add_option("--format", format);
  precision->add_option("--mode", mode);
  precision->add_option("--seeds", seeds);
  precision->add_option("--hardware", hw_path);
  precision->add_option("--shape", shape_path);
  precision->add_option("--tokens", tokens);
  precision->add_option("--json", json_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (traffic->parsed()) return cmd_traffic(world, topk, json_path);
    if (predict->parsed())
      return cmd_predict(hw_path, shape_path, cfg_text, tokens, scaling, accounting, json_path);
    if (tune->parsed())
      return cmd_tune(hw_path, shape_path, tokens, cache_path, workers, scaling, json_path);
    if (simulate->parsed())
      return cmd_simulate(hw_path, shape_path, cfg_text, auto_tune, tokens, seed, trace_prefix,
                          naive, force, scaling, json_path);
    if (verify->parsed()) return cmd_verify_mapping(seeds, json_path);
    if (precision->parsed())
      return cmd_precision(format, mode, seeds, hw_path, shape_path, tokens, json_path);
  } catch (const DeadlockError& e) {
    std::cerr << "deadlock: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
