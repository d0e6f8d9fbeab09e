// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/curvature.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace kfade {

namespace {

constexpr int kFitBatch = 256;

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

/// Per-(example, label) visitor over a batch: weight is the contribution
/// weight of the row (class probability under enumeration, 1 under MC).
template <typename Visit>
void visit_pseudo_gradients(const NetworkSpec& net, const Checkpoint& ckpt,
                            const Dataset& data, FisherMode mode, Rng& rng,
                            Visit&& visit) {
  const int num_classes = net.output_dim();
  for (std::size_t begin = 0; begin < data.size(); begin += kFitBatch) {
    const std::size_t end = std::min(data.size(), begin + kFitBatch);
    std::vector<int> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(begin + i);
    BatchCapture cap = forward(net, ckpt, stack_features(data, idx));
    const Eigen::Index batch = cap.logits.rows();

    Matrix probs(batch, num_classes);
    for (Eigen::Index b = 0; b < batch; ++b) {
      probs.row(b) = softmax(cap.logits.row(b).transpose()).transpose();
    }

    if (mode.exact) {
      for (int y = 0; y < num_classes; ++y) {
        Matrix logit_grads(batch, num_classes);
        for (Eigen::Index b = 0; b < batch; ++b) {
          logit_grads.row(b) = -probs.row(b);
          logit_grads(b, y) += 1.0;
        }
        backward(net, ckpt, cap, logit_grads);
        for (Eigen::Index b = 0; b < batch; ++b) {
          visit(cap, b, probs(b, y));
        }
      }
    } else {
      for (int s = 0; s < mode.mc_samples; ++s) {
        Matrix logit_grads(batch, num_classes);
        for (Eigen::Index b = 0; b < batch; ++b) {
          std::vector<double> w(probs.row(b).data(),
                                probs.row(b).data() + num_classes);
          const int y = rng.categorical(w);
          logit_grads.row(b) = -probs.row(b);
          logit_grads(b, y) += 1.0;
        }
        backward(net, ckpt, cap, logit_grads);
        for (Eigen::Index b = 0; b < batch; ++b) {
          visit(cap, b, 1.0);
        }
      }
    }
  }
}

void check_targets_cover(const CurvatureState& state,
                         const std::vector<Matrix>& values) {
  if (values.size() != state.target_layers.size()) {
    throw Error::config("per-layer value count does not cover target_layers");
  }
}

/// Damped reciprocal. Fitted curvature is PSD up to roundoff, so genuinely
/// negative eigenvalues are an error; zero eigenvalues are singular exactly
/// when damping is zero (any positive damping keeps the solve defined).
double damped_inverse(double eigenvalue, double damping, double max_abs) {
  if (eigenvalue < -1e-8 * (1.0 + max_abs)) {
    throw Error::numeric("ihvp: curvature has a negative eigenvalue");
  }
  const double denom = std::max(eigenvalue, 0.0) + damping;
  if (damping == 0.0 && denom <= 1e-14 * (1.0 + max_abs)) {
    throw Error::numeric(
        "ihvp: singular curvature (zero eigenvalue with damping 0)");
  }
  return 1.0 / denom;
}

}  // namespace

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "identity") return EstimatorKind::identity;
  if (s == "diagonal") return EstimatorKind::diagonal;
  if (s == "kfac") return EstimatorKind::kfac;
  if (s == "ekfac") return EstimatorKind::ekfac;
  if (s == "exact_dense") return EstimatorKind::exact_dense;
  throw Error::config("unknown estimator '" + s + "'");
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::identity: return "identity";
    case EstimatorKind::diagonal: return "diagonal";
    case EstimatorKind::kfac: return "kfac";
    case EstimatorKind::ekfac: return "ekfac";
    case EstimatorKind::exact_dense: return "exact_dense";
  }
  return "identity";
}

int targeted_parameter_count(const NetworkSpec& net,
                             const std::vector<std::string>& target_layers) {
  int n = 0;
  for (const std::string& name : target_layers) {
    const LayerSpec& l = net.layers[net.layer_index(name)];
    n += l.d_out * (l.d_in + 1);
  }
  return n;
}

static std::vector<int> resolve_targets(const NetworkSpec& net,
                                        const std::vector<std::string>& names) {
  if (names.empty()) throw Error::config("target_layers must be nonempty");
  std::vector<int> idx;
  idx.reserve(names.size());
  for (const std::string& n : names) idx.push_back(net.layer_index(n));
  return idx;
}

CurvatureState make_identity_state(const NetworkSpec& net,
                                   const std::vector<std::string>& target_layers) {
  CurvatureState state;
  state.kind = EstimatorKind::identity;
  state.target_layers = target_layers;
  state.layer_indices = resolve_targets(net, target_layers);
  return state;
}

CurvatureState fit_factors(const NetworkSpec& net, const Checkpoint& ckpt,
                           const Dataset& retain, EstimatorKind kind,
                           FisherMode mode,
                           const std::vector<std::string>& target_layers,
                           Rng& rng) {
  if (retain.empty()) throw Error::config("fit_factors: empty dataset");
  if (kind == EstimatorKind::identity) {
    throw Error::config("fit_factors: identity estimator needs no fitting");
  }
  retain.validate();

  CurvatureState state;
  state.kind = kind;
  state.mode = mode;
  state.target_layers = target_layers;
  state.layer_indices = resolve_targets(net, target_layers);
  state.fit_fingerprint = retain.fingerprint();

  if (kind == EstimatorKind::exact_dense &&
      targeted_parameter_count(net, target_layers) > kDenseParameterGuard) {
    throw Error::config("exact_dense estimator limited to " +
                        std::to_string(kDenseParameterGuard) +
                        " targeted parameters");
  }

  const std::size_t n_targets = state.layer_indices.size();
  if (kind == EstimatorKind::kfac || kind == EstimatorKind::ekfac) {
    state.kfac.resize(n_targets);
    for (std::size_t t = 0; t < n_targets; ++t) {
      const LayerSpec& l = net.layers[state.layer_indices[t]];
      state.kfac[t].A = Matrix::Zero(l.d_in + 1, l.d_in + 1);
      state.kfac[t].S = Matrix::Zero(l.d_out, l.d_out);
    }
  } else if (kind == EstimatorKind::diagonal) {
    for (int li : state.layer_indices) {
      const LayerSpec& l = net.layers[li];
      state.diagonal.push_back(Matrix::Zero(l.d_out, l.d_in + 1));
    }
  } else {
    for (int li : state.layer_indices) {
      const LayerSpec& l = net.layers[li];
      const int p = l.d_out * (l.d_in + 1);
      state.dense.push_back(Matrix::Zero(p, p));
    }
  }

  const auto t_cov = std::chrono::steady_clock::now();

  // A is accumulated once per example (forward only); S / diagonal / dense
  // rows are accumulated per (example, label) with the mode's weight.
  if (kind == EstimatorKind::kfac || kind == EstimatorKind::ekfac) {
    for (std::size_t begin = 0; begin < retain.size(); begin += kFitBatch) {
      const std::size_t end = std::min(retain.size(), begin + kFitBatch);
      std::vector<int> idx(end - begin);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = static_cast<int>(begin + i);
      }
      const BatchCapture cap = forward(net, ckpt, stack_features(retain, idx));
      for (std::size_t t = 0; t < n_targets; ++t) {
        const Matrix& a = cap.activations[state.layer_indices[t]];
        state.kfac[t].A.noalias() += a.transpose() * a;
        state.kfac[t].rows_a += a.rows();
      }
    }
    for (std::size_t t = 0; t < n_targets; ++t) {
      state.kfac[t].A /= static_cast<double>(state.kfac[t].rows_a);
    }
  }

  visit_pseudo_gradients(
      net, ckpt, retain, mode, rng,
      [&](const BatchCapture& cap, Eigen::Index b, double weight) {
        for (std::size_t t = 0; t < n_targets; ++t) {
          const int li = state.layer_indices[t];
          const Vector ds = cap.pseudo_grads[li].row(b).transpose();
          switch (kind) {
            case EstimatorKind::kfac:
            case EstimatorKind::ekfac:
              state.kfac[t].S.noalias() += weight * ds * ds.transpose();
              break;
            case EstimatorKind::diagonal: {
              const Vector a = cap.activations[li].row(b).transpose();
              state.diagonal[t].noalias() +=
                  weight * ds.cwiseProduct(ds) *
                  a.cwiseProduct(a).transpose();
              break;
            }
            case EstimatorKind::exact_dense: {
              const Vector a = cap.activations[li].row(b).transpose();
              const Vector v = flatten_row_major(ds * a.transpose());
              state.dense[t].noalias() += weight * v * v.transpose();
              break;
            }
            case EstimatorKind::identity: break;
          }
        }
      });

  const double rows_s = mode.exact
                            ? static_cast<double>(retain.size())
                            : static_cast<double>(retain.size()) * mode.mc_samples;
  for (std::size_t t = 0; t < n_targets; ++t) {
    if (kind == EstimatorKind::kfac || kind == EstimatorKind::ekfac) {
      state.kfac[t].S /= rows_s;
      state.kfac[t].rows_s = static_cast<std::int64_t>(rows_s);
    } else if (kind == EstimatorKind::diagonal) {
      state.diagonal[t] /= rows_s;
    } else {
      state.dense[t] /= rows_s;
    }
  }
  state.timings.covariance_seconds = elapsed_seconds(t_cov);

  const auto t_eig = std::chrono::steady_clock::now();
  if (kind == EstimatorKind::kfac || kind == EstimatorKind::ekfac) {
    for (std::size_t t = 0; t < n_targets; ++t) {
      // Covariances are symmetric by construction up to roundoff.
      state.kfac[t].A = 0.5 * (state.kfac[t].A + state.kfac[t].A.transpose()).eval();
      state.kfac[t].S = 0.5 * (state.kfac[t].S + state.kfac[t].S.transpose()).eval();
      state.kfac[t].eig_a = sym_eigen(state.kfac[t].A);
      state.kfac[t].eig_s = sym_eigen(state.kfac[t].S);
    }
  }
  state.timings.eigen_seconds = elapsed_seconds(t_eig);
  return state;
}

void fit_eigenvalue_correction(const NetworkSpec& net, const Checkpoint& ckpt,
                               const Dataset& retain, CurvatureState& state,
                               Rng& rng) {
  if (state.kind != EstimatorKind::ekfac) {
    throw Error::config("fit_eigenvalue_correction: state is not ekfac");
  }
  for (const KfacLayerState& ls : state.kfac) {
    if (ls.eig_a.q.size() == 0 || ls.eig_s.q.size() == 0) {
      throw Error::config("fit_eigenvalue_correction: missing eigendecompositions");
    }
  }
  const auto t_corr = std::chrono::steady_clock::now();
  const std::size_t n_targets = state.layer_indices.size();
  std::vector<Matrix> lambda(n_targets);
  for (std::size_t t = 0; t < n_targets; ++t) {
    const LayerSpec& l = net.layers[state.layer_indices[t]];
    lambda[t] = Matrix::Zero(l.d_out, l.d_in + 1);
  }

  visit_pseudo_gradients(
      net, ckpt, retain, state.mode, rng,
      [&](const BatchCapture& cap, Eigen::Index b, double weight) {
        for (std::size_t t = 0; t < n_targets; ++t) {
          const int li = state.layer_indices[t];
          const Vector ds = cap.pseudo_grads[li].row(b).transpose();
          const Vector a = cap.activations[li].row(b).transpose();
          const Matrix dw = ds * a.transpose();
          const Matrix rotated =
              state.kfac[t].eig_s.q.transpose() * dw * state.kfac[t].eig_a.q;
          lambda[t].noalias() += weight * rotated.cwiseProduct(rotated);
        }
      });

  const double rows = state.mode.exact
                          ? static_cast<double>(retain.size())
                          : static_cast<double>(retain.size()) * state.mode.mc_samples;
  for (std::size_t t = 0; t < n_targets; ++t) {
    state.kfac[t].lambda_corr = lambda[t] / rows;
  }
  state.timings.correction_seconds = elapsed_seconds(t_corr);
}

CurvatureState fit_curvature(const NetworkSpec& net, const Checkpoint& ckpt,
                             const Dataset& retain, EstimatorKind kind,
                             FisherMode mode,
                             const std::vector<std::string>& target_layers,
                             Rng& rng) {
  if (kind == EstimatorKind::identity) {
    return make_identity_state(net, target_layers);
  }
  CurvatureState state = fit_factors(net, ckpt, retain, kind, mode, target_layers, rng);
  if (kind == EstimatorKind::ekfac) {
    fit_eigenvalue_correction(net, ckpt, retain, state, rng);
  }
  return state;
}

std::vector<Matrix> ihvp(const CurvatureState& state,
                         const std::vector<Matrix>& grads, double damping) {
  if (damping < 0.0) throw Error::config("ihvp: damping must be nonnegative");
  check_targets_cover(state, grads);
  std::vector<Matrix> out(grads.size());
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const Matrix& g = grads[t];
    switch (state.kind) {
      case EstimatorKind::identity:
        out[t] = g / (1.0 + damping);
        break;
      case EstimatorKind::diagonal: {
        const Matrix& d = state.diagonal[t];
        if (d.rows() != g.rows() || d.cols() != g.cols()) {
          throw Error::config("ihvp: gradient shape mismatch");
        }
        const double max_abs = d.cwiseAbs().maxCoeff();
        Matrix r(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          for (Eigen::Index j = 0; j < g.cols(); ++j) {
            r(i, j) = g(i, j) * damped_inverse(d(i, j), damping, max_abs);
          }
        }
        out[t] = r;
        break;
      }
      case EstimatorKind::kfac:
      case EstimatorKind::ekfac: {
        const KfacLayerState& ls = state.kfac[t];
        if (g.rows() != ls.S.rows() || g.cols() != ls.A.rows()) {
          throw Error::config("ihvp: gradient shape mismatch");
        }
        Matrix scale(g.rows(), g.cols());
        if (state.kind == EstimatorKind::kfac) {
          double max_abs = 0.0;
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
              max_abs = std::max(
                  max_abs, std::abs(ls.eig_s.eigenvalues(i) * ls.eig_a.eigenvalues(j)));
            }
          }
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
              scale(i, j) = damped_inverse(
                  ls.eig_s.eigenvalues(i) * ls.eig_a.eigenvalues(j), damping,
                  max_abs);
            }
          }
        } else {
          if (ls.lambda_corr.size() == 0) {
            throw Error::config("ihvp: ekfac state missing lambda correction");
          }
          const double max_abs = ls.lambda_corr.cwiseAbs().maxCoeff();
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
              scale(i, j) = damped_inverse(ls.lambda_corr(i, j), damping, max_abs);
            }
          }
        }
        out[t] = kron_quadratic_apply(ls.eig_a.q, ls.eig_s.q, scale, g);
        break;
      }
      case EstimatorKind::exact_dense: {
        const Matrix& block = state.dense[t];
        const Vector v = flatten_row_major(g);
        if (v.size() != block.rows()) {
          throw Error::config("ihvp: gradient shape mismatch");
        }
        const SymEigen eig = sym_eigen(0.5 * (block + block.transpose()));
        const double max_abs = eig.eigenvalues.cwiseAbs().maxCoeff();
        Vector coeffs = eig.q.transpose() * v;
        for (Eigen::Index i = 0; i < coeffs.size(); ++i) {
          coeffs(i) *= damped_inverse(eig.eigenvalues(i), damping, max_abs);
        }
        out[t] = unflatten_row_major(eig.q * coeffs, g.rows(), g.cols());
        break;
      }
    }
  }
  return out;
}

std::vector<Matrix> dense_reconstruct(const CurvatureState& state,
                                      const NetworkSpec& net) {
  if (targeted_parameter_count(net, state.target_layers) > kDenseParameterGuard) {
    throw Error::config("dense_reconstruct limited to " +
                        std::to_string(kDenseParameterGuard) +
                        " targeted parameters");
  }
  std::vector<Matrix> out;
  for (std::size_t t = 0; t < state.target_layers.size(); ++t) {
    const LayerSpec& l = net.layers[state.layer_indices[t]];
    const int p = l.d_out * (l.d_in + 1);
    switch (state.kind) {
      case EstimatorKind::identity:
        out.push_back(Matrix::Identity(p, p));
        break;
      case EstimatorKind::diagonal:
        out.push_back(flatten_row_major(state.diagonal[t]).asDiagonal());
        break;
      case EstimatorKind::kfac:
        out.push_back(kron(state.kfac[t].S, state.kfac[t].A));
        break;
      case EstimatorKind::ekfac: {
        const KfacLayerState& ls = state.kfac[t];
        if (ls.lambda_corr.size() == 0) {
          throw Error::config("dense_reconstruct: ekfac state missing lambda");
        }
        const Matrix basis = kron(ls.eig_s.q, ls.eig_a.q);
        out.push_back(basis *
                      flatten_row_major(ls.lambda_corr).asDiagonal() *
                      basis.transpose());
        break;
      }
      case EstimatorKind::exact_dense:
        out.push_back(state.dense[t]);
        break;
    }
  }
  return out;
}

double quadratic_form(const CurvatureState& state, const std::vector<Matrix>& v,
                      double damping) {
  check_targets_cover(state, v);
  double total = 0.0;
  for (std::size_t t = 0; t < v.size(); ++t) {
    const Matrix& m = v[t];
    total += damping * m.squaredNorm();
    switch (state.kind) {
      case EstimatorKind::identity:
        total += m.squaredNorm();
        break;
      case EstimatorKind::diagonal:
        if (state.diagonal[t].rows() != m.rows() ||
            state.diagonal[t].cols() != m.cols()) {
          throw Error::config("quadratic_form: shape mismatch");
        }
        total += m.cwiseProduct(m).cwiseProduct(state.diagonal[t]).sum();
        break;
      case EstimatorKind::kfac: {
        const KfacLayerState& ls = state.kfac[t];
        if (m.rows() != ls.S.rows() || m.cols() != ls.A.rows()) {
          throw Error::config("quadratic_form: shape mismatch");
        }
        const Matrix rotated = ls.eig_s.q.transpose() * m * ls.eig_a.q;
        for (Eigen::Index i = 0; i < rotated.rows(); ++i) {
          for (Eigen::Index j = 0; j < rotated.cols(); ++j) {
            total += rotated(i, j) * rotated(i, j) * ls.eig_s.eigenvalues(i) *
                     ls.eig_a.eigenvalues(j);
          }
        }
        break;
      }
      case EstimatorKind::ekfac: {
        const KfacLayerState& ls = state.kfac[t];
        if (ls.lambda_corr.size() == 0) {
          throw Error::config("quadratic_form: ekfac state missing lambda");
        }
        const Matrix rotated = ls.eig_s.q.transpose() * m * ls.eig_a.q;
        total += rotated.cwiseProduct(rotated).cwiseProduct(ls.lambda_corr).sum();
        break;
      }
      case EstimatorKind::exact_dense: {
        const Vector flat = flatten_row_major(m);
        if (flat.size() != state.dense[t].rows()) {
          throw Error::config("quadratic_form: shape mismatch");
        }
        total += flat.dot(state.dense[t] * flat);
        break;
      }
    }
  }
  return total;
}

}  // namespace kfade
