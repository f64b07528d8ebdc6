// Copyright 2026 The eplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace eplab {

// Invalid input record; the message names the first violated field.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by the simulators when no runnable event exists while
// unfinished tasks remain.
class DeadlockError : public std::runtime_error {
 public:
  explicit DeadlockError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace eplab
