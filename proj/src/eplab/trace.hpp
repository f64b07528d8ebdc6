// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "eplab/sim.hpp"

namespace eplab {

// Writes Chrome trace-event JSON ("X" complete events, one track per
// worker, role as category) to `path`, plus aggregate metrics as CSV next
// to it (extension replaced with .csv).
void emit_trace(const SimTimeline& timeline, const std::string& path);

std::string trace_json(const SimTimeline& timeline);
std::string metrics_csv(const SimTimeline& timeline);

}  // namespace eplab
