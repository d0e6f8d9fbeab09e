// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kfade/curvature.hpp"
#include "kfade/model.hpp"

namespace kfade {

struct UnlearnPlan {
  int steps = 1;            // K
  double step_size = 1e-2;  // alpha
  double damping = 1e-8;    // lambda
  LossKind forget_loss = LossKind::cross_entropy;
  EstimatorKind estimator = EstimatorKind::kfac;
  FisherMode fisher_mode;
  std::vector<std::string> target_layers;
  bool refit_every_step = true;
  std::uint64_t seed = 0;

  void validate(const NetworkSpec& net, const Dataset& forget) const;
};

struct StepRecord {
  double forget_loss_before = 0.0;
  double forget_loss_after = 0.0;
  double grad_norm = 0.0;
  double gr_inner = 0.0;        // <g_k, r_k>
  double step_quadratic = 0.0;  // realized dtheta^T (G~ + lambda I) dtheta
  std::uint64_t checkpoint_hash = 0;
};

struct UnlearnTrace {
  std::vector<StepRecord> steps;
};

struct UnlearnResult {
  Checkpoint checkpoint;
  UnlearnTrace trace;
};

/// Normalized Gauss-Newton ascent on the forget objective: splits the forget
/// set into K parts after a seeded shuffle, (re)fits curvature on the retain
/// set per the refit policy, and applies
///   theta <- theta + (alpha / sqrt(<g, r>)) r,   r = (G~ + lambda I)^-1 g
/// restricted to the targeted layers. A prefit state may be supplied when
/// refit_every_step is false; it must match the plan's estimator and targets.
/// Forget losses in the trace are measured over the whole forget set.
UnlearnResult kfade_unlearn(const NetworkSpec& net, const Checkpoint& theta,
                            const Dataset& forget, const Dataset& retain,
                            const UnlearnPlan& plan,
                            const CurvatureState* prefit = nullptr);

/// Plain gradient ascent on the mean forget loss over all layers.
UnlearnResult grad_ascent_baseline(const NetworkSpec& net, const Checkpoint& theta,
                                   const Dataset& forget, int steps, double lr,
                                   LossKind loss);

/// Ascends the forget loss while descending the mean retain cross-entropy
/// scaled by retain_weight (first-order proxy for the KL penalty).
UnlearnResult grad_diff_baseline(const NetworkSpec& net, const Checkpoint& theta,
                                 const Dataset& forget, const Dataset& retain,
                                 int steps, double lr, double retain_weight,
                                 LossKind loss);

/// Task-arithmetic transfer: finetuned + (unlearned - base), elementwise.
Checkpoint transfer_update(const Checkpoint& finetuned,
                           const Checkpoint& unlearned, const Checkpoint& base);

}  // namespace kfade
