// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "kfade/curvature.hpp"

namespace kfade {

Checkpoint retrain_oracle(const NetworkSpec& net, const Dataset& retain,
                          const TrainConfig& cfg) {
  auto [ckpt, stats] = train_sgd(net, retain, cfg);
  (void)stats;
  ckpt.provenance = "retrain_oracle";
  return ckpt;
}

namespace {

constexpr double kNewtonTol = 1e-10;
constexpr int kNewtonMaxIters = 200;

/// Multinomial logistic objective over a subset of rows, with an l2 term.
/// theta is C x (d+1); features rows gain a homogeneous 1.
struct LogisticProblem {
  const Matrix& x;  // n x d
  const std::vector<int>& y;
  std::vector<int> rows;
  double l2 = 0.0;
  int classes = 0;

  Matrix homogeneous(int row) const {
    Vector a(x.cols() + 1);
    a.head(x.cols()) = x.row(row).transpose();
    a(x.cols()) = 1.0;
    return a;
  }

  double value(const Matrix& theta) const {
    double total = 0.5 * l2 * theta.squaredNorm();
    for (int r : rows) {
      const Vector z = theta * homogeneous(r);
      total += cross_entropy(z, y[r]).loss;
    }
    return total;
  }

  Matrix gradient(const Matrix& theta) const {
    Matrix g = l2 * theta;
    for (int r : rows) {
      const Vector a = homogeneous(r);
      const Vector z = theta * a;
      g.noalias() += cross_entropy(z, y[r]).logit_grad * a.transpose();
    }
    return g;
  }

  /// Hessian over flattened theta (row-major vec), including the l2 term.
  Matrix hessian(const Matrix& theta) const {
    const int p = static_cast<int>(theta.size());
    Matrix h = l2 * Matrix::Identity(p, p);
    for (int r : rows) {
      const Vector a = homogeneous(r);
      const Vector prob = softmax(theta * a);
      const Matrix hz = Matrix(prob.asDiagonal()) - prob * prob.transpose();
      h.noalias() += kron(hz, a * a.transpose());
    }
    return h;
  }
};

/// Full-batch damped Newton with backtracking, to gradient norm <= 1e-10.
std::pair<Matrix, int> newton_minimize(const LogisticProblem& prob,
                                       Matrix theta) {
  for (int iter = 1; iter <= kNewtonMaxIters; ++iter) {
    const Matrix grad = prob.gradient(theta);
    if (grad.norm() <= kNewtonTol) return {theta, iter - 1};
    Matrix h = prob.hessian(theta);
    // Levenberg damping until the factorization is safely positive definite.
    double mu = 0.0;
    Eigen::LLT<Matrix> llt(h);
    while (llt.info() != Eigen::Success) {
      mu = std::max(1e-10, mu * 10.0);
      llt.compute(h + mu * Matrix::Identity(h.rows(), h.cols()));
    }
    const Vector step = llt.solve(flatten_row_major(grad));
    const Matrix direction =
        -unflatten_row_major(step, theta.rows(), theta.cols());

    // Backtrack on the objective only outside the quadratic basin; near the
    // optimum the objective differences sit below double roundoff and the
    // full Newton step is the right move.
    if (grad.norm() > 1e-6) {
      const double f0 = prob.value(theta);
      const double slope =
          flatten_row_major(grad).dot(flatten_row_major(direction));
      double t = 1.0;
      Matrix candidate = theta + direction;
      int backtracks = 0;
      while (prob.value(candidate) > f0 + 1e-4 * t * slope && backtracks < 60) {
        t *= 0.5;
        candidate = theta + t * direction;
        ++backtracks;
      }
      theta = candidate;
    } else {
      theta += direction;
    }
  }
  const double g = prob.gradient(theta).norm();
  if (g > kNewtonTol) {
    std::ostringstream oss;
    oss << "newton_minimize: no convergence, gradient norm " << g;
    throw Error::numeric(oss.str());
  }
  return {theta, kNewtonMaxIters};
}

std::vector<int> all_rows(Eigen::Index n) {
  std::vector<int> rows(n);
  for (Eigen::Index i = 0; i < n; ++i) rows[i] = static_cast<int>(i);
  return rows;
}

std::vector<int> retain_rows(Eigen::Index n, const std::vector<int>& forget) {
  const std::set<int> forget_set(forget.begin(), forget.end());
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!forget_set.count(static_cast<int>(i))) rows.push_back(static_cast<int>(i));
  }
  return rows;
}

void check_forget_indices(Eigen::Index n, const std::vector<int>& forget) {
  for (int idx : forget) {
    if (idx < 0 || idx >= n) {
      throw Error::config("forget index out of range");
    }
  }
}

}  // namespace

ResponseReport logistic_response_check(const Matrix& features,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& forget_indices,
                                       double l2_reg) {
  if (features.rows() == 0) throw Error::config("logistic response: empty data");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw Error::config("logistic response: label count mismatch");
  }
  if (!(l2_reg > 0.0)) {
    throw Error::config("logistic response: l2_reg must be positive");
  }
  check_forget_indices(features.rows(), forget_indices);
  const int classes = 1 + *std::max_element(labels.begin(), labels.end());
  if (classes < 2) throw Error::config("logistic response: needs >= 2 classes");

  LogisticProblem full{features, labels, all_rows(features.rows()), l2_reg, classes};
  LogisticProblem retain{features, labels,
                         retain_rows(features.rows(), forget_indices), l2_reg,
                         classes};
  if (retain.rows.empty()) {
    throw Error::config("logistic response: forget set covers all data");
  }

  const Matrix theta0 = Matrix::Zero(classes, features.cols() + 1);
  auto [theta_full, iters_full] = newton_minimize(full, theta0);
  auto [theta_retain, iters_retain] = newton_minimize(retain, theta0);

  // One-shot update: ascend the forget-set gradient through the inverse
  // retain-objective Hessian at theta_full. For an empty forget set the
  // update vanishes and theta_hat == theta_full.
  Matrix theta_hat = theta_full;
  if (!forget_indices.empty()) {
    LogisticProblem forget{features, labels, forget_indices, 0.0, classes};
    const Matrix g_forget = forget.gradient(theta_full);
    const Matrix h_retain = retain.hessian(theta_full);
    const Vector step = Eigen::LLT<Matrix>(h_retain).solve(flatten_row_major(g_forget));
    theta_hat += unflatten_row_major(step, theta_full.rows(), theta_full.cols());
  }

  ResponseReport report;
  report.d0 = (theta_full - theta_retain).norm();
  report.d1 = (theta_hat - theta_retain).norm();
  report.ratio = report.d0 > 0.0 ? report.d1 / report.d0 : 0.0;
  report.grad_norm_full = full.gradient(theta_full).norm();
  report.grad_norm_retain = retain.gradient(theta_retain).norm();
  report.iters_full = iters_full;
  report.iters_retain = iters_retain;
  return report;
}

ResponseReport ridge_response_check(const Matrix& features, const Vector& targets,
                                    const std::vector<int>& forget_indices,
                                    double l2_reg) {
  if (features.rows() == 0) throw Error::config("ridge response: empty data");
  if (targets.size() != features.rows()) {
    throw Error::config("ridge response: target count mismatch");
  }
  if (!(l2_reg > 0.0)) throw Error::config("ridge response: l2_reg must be positive");
  check_forget_indices(features.rows(), forget_indices);

  const Eigen::Index d = features.cols();
  const auto solve_subset = [&](const std::vector<int>& rows) {
    Matrix m = l2_reg * Matrix::Identity(d, d);
    Vector b = Vector::Zero(d);
    for (int r : rows) {
      const Vector x = features.row(r).transpose();
      m.noalias() += x * x.transpose();
      b.noalias() += targets(r) * x;
    }
    return std::pair<Matrix, Vector>(m, b);
  };

  const std::vector<int> full = all_rows(features.rows());
  const std::vector<int> retain = retain_rows(features.rows(), forget_indices);
  if (retain.empty()) throw Error::config("ridge response: forget set covers all data");

  auto [m_full, b_full] = solve_subset(full);
  auto [m_retain, b_retain] = solve_subset(retain);
  const Vector theta_full = Eigen::LLT<Matrix>(m_full).solve(b_full);
  const Vector theta_retain = Eigen::LLT<Matrix>(m_retain).solve(b_retain);

  Vector theta_hat = theta_full;
  if (!forget_indices.empty()) {
    Vector g_forget = Vector::Zero(d);
    for (int r : forget_indices) {
      const Vector x = features.row(r).transpose();
      g_forget += (x.dot(theta_full) - targets(r)) * x;
    }
    theta_hat += Eigen::LLT<Matrix>(m_retain).solve(g_forget);
  }

  ResponseReport report;
  report.d0 = (theta_full - theta_retain).norm();
  report.d1 = (theta_hat - theta_retain).norm();
  report.ratio = report.d0 > 0.0 ? report.d1 / report.d0 : 0.0;
  return report;
}

std::vector<Matrix> exact_gauss_newton(const NetworkSpec& net,
                                       const Checkpoint& ckpt,
                                       const Dataset& data,
                                       const std::vector<std::string>& target_layers) {
  if (data.empty()) throw Error::config("exact_gauss_newton: empty dataset");
  if (targeted_parameter_count(net, target_layers) > kDenseParameterGuard) {
    throw Error::config("exact_gauss_newton limited to " +
                        std::to_string(kDenseParameterGuard) +
                        " targeted parameters");
  }
  std::vector<int> layer_indices;
  for (const std::string& name : target_layers) {
    layer_indices.push_back(net.layer_index(name));
  }
  const int classes = net.output_dim();

  std::vector<Matrix> blocks;
  for (int li : layer_indices) {
    const LayerSpec& l = net.layers[li];
    const int p = l.d_out * (l.d_in + 1);
    blocks.push_back(Matrix::Zero(p, p));
  }

  for (std::size_t i = 0; i < data.size(); ++i) {
    BatchCapture cap = forward(net, ckpt, data.examples[i].x.transpose());
    const Vector prob = softmax(cap.logits.row(0).transpose());
    const Matrix hz = Matrix(prob.asDiagonal()) - prob * prob.transpose();

    // Rows of J_l: d(z_c)/d(vec W_l), assembled one logit at a time.
    std::vector<Matrix> jac(layer_indices.size());
    for (std::size_t t = 0; t < layer_indices.size(); ++t) {
      const LayerSpec& l = net.layers[layer_indices[t]];
      jac[t] = Matrix::Zero(classes, l.d_out * (l.d_in + 1));
    }
    for (int c = 0; c < classes; ++c) {
      Matrix seed = Matrix::Zero(1, classes);
      seed(0, c) = 1.0;
      const std::vector<Matrix> grads = backward(net, ckpt, cap, seed);
      for (std::size_t t = 0; t < layer_indices.size(); ++t) {
        jac[t].row(c) = flatten_row_major(grads[layer_indices[t]]).transpose();
      }
    }
    for (std::size_t t = 0; t < layer_indices.size(); ++t) {
      blocks[t].noalias() += jac[t].transpose() * hz * jac[t];
    }
  }
  for (Matrix& b : blocks) b /= static_cast<double>(data.size());
  return blocks;
}

}  // namespace kfade
