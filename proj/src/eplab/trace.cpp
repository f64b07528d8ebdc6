// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/trace.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace eplab {

std::string trace_json(const SimTimeline& timeline) {
  nlohmann::json events = nlohmann::json::array();
  for (int r = 0; r < timeline.world; ++r) {
    for (int w = 0; w < timeline.n_sm; ++w) {
      for (const Interval& iv : timeline.workers[r][w]) {
        events.push_back({{"name", iv.stall ? std::string(role_name(iv.role)) + "-wait"
                                            : std::string(role_name(iv.role))},
                          {"cat", role_name(iv.role)},
                          {"ph", "X"},
                          {"ts", iv.start * 1e6},
                          {"dur", (iv.end - iv.start) * 1e6},
                          {"pid", r},
                          {"tid", w},
                          {"args", {{"task", iv.task}, {"stall", iv.stall}}}});
      }
    }
  }
  nlohmann::json j;
  j["traceEvents"] = std::move(events);
  j["displayTimeUnit"] = "ns";
  return j.dump(1);
}

std::string metrics_csv(const SimTimeline& t) {
  std::ostringstream os;
  os.precision(12);
  os << "metric,value\n";
  os << "l_disp_sim," << t.l_disp_sim << "\n";
  os << "l_up_sim," << t.l_up_sim << "\n";
  os << "l_down_sim," << t.l_down_sim << "\n";
  os << "l_comb_sim," << t.l_comb_sim << "\n";
  os << "l_total_sim," << t.l_total_sim << "\n";
  os << "stall_comp," << t.stall_comp << "\n";
  os << "stall_comm," << t.stall_comm << "\n";
  os << "stall_reduce," << t.stall_reduce << "\n";
  os << "total_stall," << t.total_stall << "\n";
  for (const auto& [role, busy] : t.role_busy) os << "busy_" << role << "," << busy << "\n";
  return os.str();
}

void emit_trace(const SimTimeline& timeline, const std::string& path) {
  {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write trace file " + path);
    f << trace_json(timeline) << "\n";
  }
  std::string csv_path = path;
  auto dot = csv_path.find_last_of('.');
  if (dot != std::string::npos) csv_path.resize(dot);
  csv_path += ".csv";
  std::ofstream f(csv_path);
  if (!f) throw std::runtime_error("cannot write metrics file " + csv_path);
  f << metrics_csv(timeline);
}

}  // namespace eplab
