// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eplab/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace eplab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << origin << ":" << lineno << ": expected `key = value`";
      throw ValidationError(os.str());
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

double num(const std::map<std::string, std::string>& kv, const std::string& key, double dflt,
           bool required = false) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    if (required) throw ValidationError("missing required key " + key);
    return dflt;
  }
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ValidationError("key " + key + ": not a number: " + it->second);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::map<int, double> parse_mu(const std::string& v) {
  std::map<int, double> mu;
  std::istringstream in(v);
  std::string tok;
  while (in >> tok) {
    auto colon = tok.find(':');
    if (colon == std::string::npos) throw ValidationError("mu_table entries must be warps:mfu");
    mu[std::stoi(tok.substr(0, colon))] = std::stod(tok.substr(colon + 1));
  }
  if (mu.empty()) throw ValidationError("mu_table is empty");
  return mu;
}

}  // namespace

HardwareSpec parse_hardware_text(const std::string& text, const std::string& origin) {
  auto kv = parse_kv(text, origin);
  HardwareSpec spec;
  if (auto it = kv.find("name"); it != kv.end()) spec.name = it->second;
  spec.n_sm = (int)num(kv, "n_sm", 0, true);
  spec.p_peak = num(kv, "p_peak", 0, true);
  spec.bw_hbm = num(kv, "bw_hbm", 0, true);
  spec.bw_nvl = num(kv, "bw_nvl", 0, true);
  spec.w_sat = num(kv, "w_sat", 1024);
  spec.tau_sync = num(kv, "tau_sync", 2e-6);
  spec.world_size = (int)num(kv, "world_size", 1);
  return validate_hardware(std::move(spec));
}

MoEShape parse_shape_text(const std::string& text, const std::string& origin) {
  auto kv = parse_kv(text, origin);
  MoEShape shape;
  if (auto it = kv.find("name"); it != kv.end()) shape.name = it->second;
  shape.h_dim = (int)num(kv, "h_dim", 0, true);
  shape.h_inter = (int)num(kv, "h_inter", 0, true);
  shape.n_exp = (int)num(kv, "n_exp", 0, true);
  shape.topk = (int)num(kv, "topk", 0, true);
  shape.n_tok = (long long)num(kv, "n_tok", 4096);
  shape.s_tok = (long long)num(kv, "s_tok", 0);
  shape.b_m = (int)num(kv, "b_m", 128);
  shape.b_n = (int)num(kv, "b_n", 256);
  if (auto it = kv.find("mu_table"); it != kv.end()) shape.mu_table = parse_mu(it->second);
  return shape;
}

HardwareSpec parse_hardware_file(const std::string& path) {
  return parse_hardware_text(read_file(path), path);
}

MoEShape parse_shape_file(const std::string& path) {
  return parse_shape_text(read_file(path), path);
}

std::string serialize_hardware(const HardwareSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  if (!spec.name.empty()) os << "name = " << spec.name << "\n";
  os << "n_sm = " << spec.n_sm << "\n";
  os << "p_peak = " << spec.p_peak << "\n";
  os << "bw_hbm = " << spec.bw_hbm << "\n";
  os << "bw_nvl = " << spec.bw_nvl << "\n";
  os << "w_sat = " << spec.w_sat << "\n";
  os << "tau_sync = " << spec.tau_sync << "\n";
  os << "world_size = " << spec.world_size << "\n";
  return os.str();
}

std::string serialize_shape(const MoEShape& shape) {
  std::ostringstream os;
  os.precision(17);
  if (!shape.name.empty()) os << "name = " << shape.name << "\n";
  os << "h_dim = " << shape.h_dim << "\n";
  os << "h_inter = " << shape.h_inter << "\n";
  os << "n_exp = " << shape.n_exp << "\n";
  os << "topk = " << shape.topk << "\n";
  os << "n_tok = " << shape.n_tok << "\n";
  os << "s_tok = " << shape.token_bytes() << "\n";
  os << "b_m = " << shape.b_m << "\n";
  os << "b_n = " << shape.b_n << "\n";
  os << "mu_table =";
  for (const auto& [w, mu] : shape.mu_table) os << " " << w << ":" << mu;
  os << "\n";
  return os.str();
}

}  // namespace eplab
