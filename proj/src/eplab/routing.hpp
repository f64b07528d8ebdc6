// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "eplab/types.hpp"

namespace eplab {

// Synthetic balanced routing: every token picks topk distinct experts
// uniformly without replacement; gate weights uniform(0,1) normalized to
// sum 1 per token. Pure function of (shape, world, seed).
RoutingInstance sample_routing(const MoEShape& shape, int world, std::uint64_t seed);

}  // namespace eplab
