// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace eplab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace eplab
