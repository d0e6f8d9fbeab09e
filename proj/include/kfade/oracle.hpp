// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "kfade/model.hpp"

namespace kfade {

/// Retrains from scratch on the retain set with the original training
/// configuration (same seed, so identical initialization and shuffling).
Checkpoint retrain_oracle(const NetworkSpec& net, const Dataset& retain,
                          const TrainConfig& cfg);

/// Distances reported by the response-function checks:
///   d0 = ||theta_full - theta_retain||, the gap one-shot unlearning must
///        close, and d1 = ||theta_hat - theta_retain||, what remains after
///        the one-shot update theta_hat = theta_full + H^-1 g_forget, where
///        H is the Hessian of the retain objective (data terms over the
///        retain set plus the l2 term) at theta_full.
struct ResponseReport {
  double d0 = 0.0;
  double d1 = 0.0;
  double ratio = 0.0;  // d1 / d0 (0 when d0 == 0)
  double grad_norm_full = 0.0;
  double grad_norm_retain = 0.0;
  int iters_full = 0;
  int iters_retain = 0;
};

/// Multinomial logistic regression (homogeneous coordinates) with objective
///   sum_i ce(theta; x_i, y_i) + (l2_reg / 2) ||theta||^2,
/// solved to gradient norm <= 1e-10 by damped Newton with backtracking.
ResponseReport logistic_response_check(const Matrix& features,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& forget_indices,
                                       double l2_reg);

/// Ridge regression variant; the quadratic objective makes the one-shot
/// response exact, anchoring the sign convention.
ResponseReport ridge_response_check(const Matrix& features, const Vector& targets,
                                    const std::vector<int>& forget_indices,
                                    double l2_reg);

/// Dense Gauss-Newton Hessian per targeted layer by per-example Jacobian
/// assembly, G = mean_x J^T (diag(p) - p p^T) J, under the row-major vec
/// convention. Independent cross-check for the pseudo-gradient covariance
/// route.
std::vector<Matrix> exact_gauss_newton(const NetworkSpec& net,
                                       const Checkpoint& ckpt,
                                       const Dataset& data,
                                       const std::vector<std::string>& target_layers);

}  // namespace kfade
