// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "eplab/types.hpp"

namespace eplab {

// Config files are `key = value` lines, `#` comments, keys named exactly
// after the struct fields. mu_table uses `warps:mfu` pairs.

HardwareSpec parse_hardware_file(const std::string& path);
MoEShape parse_shape_file(const std::string& path);

HardwareSpec parse_hardware_text(const std::string& text, const std::string& origin = "<text>");
MoEShape parse_shape_text(const std::string& text, const std::string& origin = "<text>");

std::string serialize_hardware(const HardwareSpec& spec);
std::string serialize_shape(const MoEShape& shape);

}  // namespace eplab
