// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kfade {

/// Failure categories, mapped one-to-one onto CLI exit codes.
enum class ErrorKind {
  config,   // exit 2: bad configuration, bad arguments, schema violations
  numeric,  // exit 3: divergence, singular systems, non-finite values
  io,       // exit 4: filesystem and format failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  static Error config(const std::string& m) { return {ErrorKind::config, m}; }
  static Error numeric(const std::string& m) { return {ErrorKind::numeric, m}; }
  static Error io(const std::string& m) { return {ErrorKind::io, m}; }

 private:
  ErrorKind kind_;
};

}  // namespace kfade
