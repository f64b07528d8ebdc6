// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/tuner.hpp"

#include <chrono>
#include <fstream>
#include <thread>
#include <tuple>

#include "json.hpp"

namespace eplab {

std::vector<int> SearchSpace::relay_choices(int n_disp) {
  std::vector<int> out;
  for (int x = 1; x <= n_disp / 2; x += 4) out.push_back(x);
  if (out.empty()) out.push_back(1);
  return out;
}

SearchSpace enumerate_space(const HardwareSpec& spec, const MoEShape& shape) {
  (void)shape;
  if (spec.n_sm < 4) throw ValidationError("n_sm must be >= 4 to enumerate the config space");
  SearchSpace s;
  s.n_sm = spec.n_sm;
  for (int x = 4; x <= spec.n_sm; x += 4) {
    s.disp_choices.push_back(x);
    s.comb_choices.push_back(x);
  }
  for (int x = 1; x <= spec.n_sm; x += 16) s.red_choices.push_back(x);
  if (s.red_choices.back() != spec.n_sm) s.red_choices.push_back(spec.n_sm);
  s.warp_choices = {8, 16, 32};

  // flat-factor arithmetic: relay and red each counted as n_sm/16 choices
  long long flat = std::max(1, spec.n_sm / 16);
  s.raw_grid_size = (long long)s.disp_choices.size() * (long long)s.comb_choices.size() * flat *
                    flat * (long long)s.warp_choices.size();

  s.enumerated_count = 0;
  for (int nd : s.disp_choices)
    s.enumerated_count += (long long)SearchSpace::relay_choices(nd).size() *
                          s.comb_choices.size() * s.red_choices.size() * s.warp_choices.size();
  return s;
}

void for_each_candidate(const SearchSpace& space, bool feasible_only,
                        const std::function<void(const TuneConfig&)>& fn) {
  for (int nd : space.disp_choices) {
    auto relays = SearchSpace::relay_choices(nd);
    for (int nc : space.comb_choices) {
      for (int nr : relays) {
        for (int nred : space.red_choices) {
          for (int w : space.warp_choices) {
            TuneConfig cfg{nd, nr, nc, nred, w};
            if (feasible_only) {
              if (nd + nr >= space.n_sm) continue;
              if (nc >= space.n_sm) continue;
            }
            fn(cfg);
          }
        }
      }
    }
  }
}

namespace {

// ascending n_disp, n_comb, n_relay; descending n_red; ascending w
std::tuple<int, int, int, int, int> tie_key(const TuneConfig& c) {
  return {c.n_disp, c.n_comb, c.n_relay, -c.n_red, c.w};
}

struct Candidate {
  double l = std::numeric_limits<double>::infinity();
  TuneConfig cfg{};
  bool valid = false;

  bool better_than(const Candidate& o) const {
    if (!o.valid) return valid;
    if (!valid) return false;
    if (l != o.l) return l < o.l;
    return tie_key(cfg) < tie_key(o.cfg);
  }
};

}  // namespace

TuneResult search_with(const HardwareSpec& spec, const MoEShape& shape, const LatencyFn& eval,
                       int n_workers) {
  auto t0 = std::chrono::steady_clock::now();
  SearchSpace space = enumerate_space(spec, shape);

  std::vector<TuneConfig> feasible;
  feasible.reserve((size_t)space.enumerated_count);
  for_each_candidate(space, /*feasible_only=*/true,
                     [&](const TuneConfig& c) { feasible.push_back(c); });
  if (feasible.empty()) throw ValidationError("empty feasible config set");

  if (n_workers <= 0) n_workers = (int)std::thread::hardware_concurrency();
  n_workers = std::max(1, std::min<int>(n_workers, 64));

  auto eval_range = [&](size_t lo, size_t hi, Candidate& out) {
    Candidate best;
    for (size_t i = lo; i < hi; ++i) {
      Candidate c{eval(feasible[i]), feasible[i], true};
      if (c.better_than(best)) best = c;
    }
    out = best;
  };

  Candidate best;
  if (n_workers == 1 || feasible.size() < 1024) {
    eval_range(0, feasible.size(), best);
  } else {
    std::vector<Candidate> partial(n_workers);
    std::vector<std::thread> pool;
    size_t chunk = (feasible.size() + n_workers - 1) / n_workers;
    for (int k = 0; k < n_workers; ++k) {
      size_t lo = std::min(feasible.size(), (size_t)k * chunk);
      size_t hi = std::min(feasible.size(), lo + chunk);
      pool.emplace_back(eval_range, lo, hi, std::ref(partial[k]));
    }
    for (auto& t : pool) t.join();
    // deterministic associative merge
    for (const auto& c : partial)
      if (c.better_than(best)) best = c;
  }

  TuneResult res;
  res.best = best.cfg;
  res.l_min = best.l;
  res.evaluated = (long long)feasible.size();
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

TuneResult search(const HardwareSpec& spec, const MoEShape& shape, const TrafficReport& traffic,
                  int n_workers, ResidualScaling mode) {
  TuneResult res = search_with(
      spec, shape,
      [&](const TuneConfig& c) { return predict_latency(shape, spec, c, traffic, mode).l_total; },
      n_workers);
  res.breakdown = predict_latency(shape, spec, res.best, traffic, mode);
  res.l_min = res.breakdown.l_total;
  return res;
}

long long token_bucket(long long n_tok) { return (n_tok + 4095) / 4096; }

TuneResult TuneCache::lookup(const HardwareSpec& spec, const MoEShape& shape, long long n_tok,
                             int n_workers, ResidualScaling mode) {
  if (n_tok < 1) throw ValidationError("n_tok must be >= 1");
  Key key{spec.name, shape.name, token_bucket(n_tok)};
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;

  MoEShape bucketed = shape;
  bucketed.n_tok = key.bucket * 4096;  // round up to the bucket boundary
  TrafficReport traffic = volume_expected(bucketed, spec);
  ++invocations_;
  TuneResult res = search(spec, bucketed, traffic, n_workers, mode);
  entries_.emplace(key, res);
  return res;
}

void TuneCache::save(const std::string& path) const {
  nlohmann::json j;
  j["version"] = 1;
  auto& arr = j["entries"] = nlohmann::json::array();
  for (const auto& [k, v] : entries_) {
    arr.push_back({{"hardware", k.hw},
                   {"shape", k.shape},
                   {"bucket", k.bucket},
                   {"n_disp", v.best.n_disp},
                   {"n_relay", v.best.n_relay},
                   {"n_comb", v.best.n_comb},
                   {"n_red", v.best.n_red},
                   {"w", v.best.w},
                   {"l_min", v.l_min},
                   {"evaluated", v.evaluated}});
  }
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write cache file " + path);
  f << j.dump(2) << "\n";
}

void TuneCache::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) return;
  nlohmann::json j;
  f >> j;
  if (j.value("version", 0) != 1) throw ValidationError("unknown cache file version in " + path);
  for (const auto& e : j["entries"]) {
    Key k{e.at("hardware").get<std::string>(), e.at("shape").get<std::string>(),
          e.at("bucket").get<long long>()};
    TuneResult r;
    r.best = TuneConfig{e.at("n_disp").get<int>(), e.at("n_relay").get<int>(),
                        e.at("n_comb").get<int>(), e.at("n_red").get<int>(), e.at("w").get<int>()};
    r.l_min = e.at("l_min").get<double>();
    r.evaluated = e.at("evaluated").get<long long>();
    entries_.emplace(k, r);
  }
}

}  // namespace eplab
