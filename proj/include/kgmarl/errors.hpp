// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#pragma once

#include <stdexcept>
#include <string>

namespace kgmarl {

/// Mis-shaped inputs, bad config values, unknown identifiers.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition on data (empty batch, all-false mask, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite gradient or loss; training cannot continue.
class TrainingAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kgmarl
