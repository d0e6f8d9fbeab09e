// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kfade/model.hpp"

namespace kfade {

enum class EstimatorKind { identity, diagonal, kfac, ekfac, exact_dense };

EstimatorKind estimator_from_string(const std::string& s);
std::string to_string(EstimatorKind kind);

/// How logit pseudo-gradients are produced when fitting: exact enumeration
/// weights every class by its model probability; Monte Carlo draws
/// mc_samples labels per example from the model distribution.
struct FisherMode {
  bool exact = true;
  int mc_samples = 1;

  static FisherMode enumeration() { return {true, 1}; }
  static FisherMode monte_carlo(int samples) { return {false, samples}; }
  /// Enumeration when the class count is small enough, else monte_carlo(1).
  static FisherMode auto_select(int num_classes) {
    return num_classes <= 64 ? enumeration() : monte_carlo(1);
  }
};

/// Per-layer Kronecker factor state. A is the uncentered covariance of the
/// homogeneous input activations, S the covariance of the post-affine
/// pseudo-gradients; lambda_corr holds the corrected eigenvalues in the
/// (eig_s, eig_a) basis once the second fitting pass has run (empty before).
struct KfacLayerState {
  Matrix A;  // (d_in+1) x (d_in+1)
  Matrix S;  // d_out x d_out
  SymEigen eig_a;
  SymEigen eig_s;
  Matrix lambda_corr;  // d_out x (d_in+1), empty until fitted
  std::int64_t rows_a = 0;
  std::int64_t rows_s = 0;
};

struct FitTimings {
  double covariance_seconds = 0.0;
  double eigen_seconds = 0.0;
  double correction_seconds = 0.0;
};

/// State of one fitted estimator over a set of targeted layers. Exactly one
/// of the per-layer vectors is populated, depending on kind; identity keeps
/// none. Immutable after fitting.
struct CurvatureState {
  EstimatorKind kind = EstimatorKind::identity;
  FisherMode mode;
  std::vector<std::string> target_layers;
  std::vector<int> layer_indices;      // positions in NetworkSpec::layers
  std::vector<KfacLayerState> kfac;    // kfac / ekfac
  std::vector<Matrix> diagonal;        // d_out x (d_in+1) mean squared grads
  std::vector<Matrix> dense;           // p_l x p_l per-layer Fisher blocks
  std::uint64_t fit_fingerprint = 0;
  FitTimings timings;
};

constexpr int kDenseParameterGuard = 4096;

int targeted_parameter_count(const NetworkSpec& net,
                             const std::vector<std::string>& target_layers);

CurvatureState make_identity_state(const NetworkSpec& net,
                                   const std::vector<std::string>& target_layers);

/// One pass over the retain set: accumulates A and S (kfac/ekfac), mean
/// squared parameter pseudo-gradients (diagonal) or per-layer dense Fisher
/// blocks (exact_dense), then eigendecomposes A and S. Enumeration weights
/// each class by rho(y|z); Monte Carlo consumes rng.
CurvatureState fit_factors(const NetworkSpec& net, const Checkpoint& ckpt,
                           const Dataset& retain, EstimatorKind kind,
                           FisherMode mode,
                           const std::vector<std::string>& target_layers,
                           Rng& rng);

/// Second pass for EK-FAC: rotates each per-example pseudo-gradient matrix
/// into the Kronecker eigenbasis, R = Qs^T dW Qa, and stores
/// lambda_corr = mean(R .* R).
void fit_eigenvalue_correction(const NetworkSpec& net, const Checkpoint& ckpt,
                               const Dataset& retain, CurvatureState& state,
                               Rng& rng);

/// Convenience wrapper: identity shortcut, fit_factors, and the correction
/// pass when kind == ekfac.
CurvatureState fit_curvature(const NetworkSpec& net, const Checkpoint& ckpt,
                             const Dataset& retain, EstimatorKind kind,
                             FisherMode mode,
                             const std::vector<std::string>& target_layers,
                             Rng& rng);

/// Solves (G~ + damping I) vec(r_l) = vec(grads_l) per targeted layer.
/// grads must be indexed parallel to state.target_layers. With damping 0 a
/// singular factor raises a numeric error.
std::vector<Matrix> ihvp(const CurvatureState& state,
                         const std::vector<Matrix>& grads, double damping);

/// Materializes G~ as one dense matrix per targeted layer under the
/// row-major vec convention. Guarded by kDenseParameterGuard.
std::vector<Matrix> dense_reconstruct(const CurvatureState& state,
                                      const NetworkSpec& net);

/// v^T (G~ + damping I) v over all targeted layers, computed through the
/// factored structure.
double quadratic_form(const CurvatureState& state, const std::vector<Matrix>& v,
                      double damping);

}  // namespace kfade
