// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "kfade/container.hpp"
#include "kfade/curvature.hpp"
#include "kfade/model.hpp"

namespace kfade {

/// Checkpoints persist as a KFT1 container with one `<layer>/W` entry per
/// layer plus a `__meta__` entry embedding a JSON document (layer specs,
/// seed, step count, provenance) as byte values.
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& net,
                     const Checkpoint& ckpt);

struct LoadedCheckpoint {
  NetworkSpec net;
  Checkpoint checkpoint;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Curvature state persists with per-layer entries `<layer>/A`, `<layer>/S`,
/// `<layer>/QA`, `<layer>/QS`, `<layer>/lamA`, `<layer>/lamS`,
/// `<layer>/lambda_corr`, `<layer>/diag`, `<layer>/dense` (as applicable for
/// the estimator) plus a `__meta__` entry. The identity estimator stores
/// metadata only.
void save_curvature(const std::filesystem::path& path, const NetworkSpec& net,
                    const CurvatureState& state);
CurvatureState load_curvature(const std::filesystem::path& path,
                              const NetworkSpec& net);

}  // namespace kfade
