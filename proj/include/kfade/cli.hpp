// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace kfade {

/// Entry point of the kfade tool. Subcommands: train, fit-curvature,
/// unlearn, eval, transfer, sweep, oracle, gen. Exit codes: 0 success,
/// 2 config error, 3 numeric failure, 4 I/O failure.
int run_cli(int argc, const char* const* argv);

/// Convenience overload for in-process tests.
int run_cli(const std::vector<std::string>& args);

}  // namespace kfade
