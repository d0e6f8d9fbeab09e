// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kfade/curvature.hpp"
#include "kfade/oracle.hpp"
#include "kfade/scenarios.hpp"

using namespace kfade;

namespace {

struct SyntheticLogistic {
  Matrix x;
  std::vector<int> labels;

  SyntheticLogistic(int n, int d, int classes, std::uint64_t seed) : x(n, d) {
    Rng rng(seed);
    Matrix w(classes, d);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal();
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
      std::vector<double> weights(classes);
      for (int c = 0; c < classes; ++c) {
        weights[c] = std::exp(w.row(c).dot(x.row(i)));
      }
      labels.push_back(rng.categorical(weights));
    }
  }
};

Checkpoint random_checkpoint(const NetworkSpec& net, std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint ckpt;
  for (const LayerSpec& l : net.layers) {
    Matrix w(l.d_out, l.d_in + 1);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = 0.5 * rng.normal();
    }
    ckpt.weights.push_back(std::move(w));
  }
  return ckpt;
}

Dataset random_dataset(int n, int dim, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.feature_dim = dim;
  data.num_classes = classes;
  for (int i = 0; i < n; ++i) {
    Example e;
    e.x = Vector(dim);
    for (int j = 0; j < dim; ++j) e.x(j) = rng.normal();
    e.y = static_cast<int>(rng.bounded(classes));
    data.examples.push_back(std::move(e));
  }
  return data;
}

}  // namespace

TEST_CASE("ridge response is exact for the quadratic objective") {
  Rng rng(1);
  const int n = 80, d = 6;
  Matrix x(n, d);
  Vector w(d), y(n);
  for (int j = 0; j < d; ++j) w(j) = rng.normal();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
    y(i) = x.row(i).dot(w) + 0.2 * rng.normal();
  }
  std::vector<int> forget{0, 3, 4, 9, 15, 22};
  const ResponseReport r = ridge_response_check(x, y, forget, 1e-2);
  CHECK(r.d0 > 0.0);
  CHECK(r.d1 <= 1e-8);

  const ResponseReport empty = ridge_response_check(x, y, {}, 1e-2);
  CHECK(empty.d0 == doctest::Approx(0.0));
  CHECK(empty.d1 == doctest::Approx(0.0));
}

TEST_CASE("logistic response closes at least half the retraining gap") {
  const SyntheticLogistic problem(500, 10, 3, 7);
  std::vector<int> forget(25);
  for (int i = 0; i < 25; ++i) forget[i] = i * 3;
  const ResponseReport r =
      logistic_response_check(problem.x, problem.labels, forget, 1e-2);
  CHECK(r.grad_norm_full <= 1e-10);
  CHECK(r.grad_norm_retain <= 1e-10);
  CHECK(r.d0 > 0.0);
  CHECK(r.ratio <= 0.5);

  const ResponseReport empty =
      logistic_response_check(problem.x, problem.labels, {}, 1e-2);
  CHECK(empty.d0 == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(empty.d1 == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("logistic response rejects bad inputs") {
  const SyntheticLogistic problem(20, 3, 2, 0);
  CHECK_THROWS_AS(
      logistic_response_check(problem.x, problem.labels, {100}, 1e-2), Error);
  CHECK_THROWS_AS(logistic_response_check(problem.x, problem.labels, {0}, 0.0),
                  Error);
}

TEST_CASE("exact_gauss_newton frozen single-layer case") {
  // Zero-weight two-class layer on x = [1]: G = F_z (x) a a^T under the
  // row-major vec convention, with F_z = [[.25,-.25],[-.25,.25]] and
  // a = [1, 1].
  NetworkSpec net;
  net.layers = {{"fc1", 1, 2, Nonlinearity::none}};
  Checkpoint ckpt;
  ckpt.weights = {Matrix::Zero(2, 2)};
  Dataset data;
  data.feature_dim = 1;
  data.num_classes = 2;
  Example e;
  e.x = Vector::Ones(1);
  e.y = 0;
  data.examples.push_back(e);

  const Matrix g = exact_gauss_newton(net, ckpt, data, {"fc1"})[0];
  Matrix fz(2, 2), ones(2, 2);
  fz << 0.25, -0.25, -0.25, 0.25;
  ones << 1, 1, 1, 1;
  const Matrix expect = kron(fz, ones);
  CHECK((g - expect).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("gauss-newton blocks are symmetric PSD for random nets") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    NetworkSpec net;
    const int d = 2 + static_cast<int>(rng.bounded(3));
    const int h = 2 + static_cast<int>(rng.bounded(3));
    const int c = 2 + static_cast<int>(rng.bounded(3));
    net.layers = {{"fc1", d, h, Nonlinearity::tanh},
                  {"fc2", h, c, Nonlinearity::none}};
    const Checkpoint ckpt = random_checkpoint(net, 100 + trial);
    const Dataset data = random_dataset(6, d, c, 200 + trial);
    for (const Matrix& g : exact_gauss_newton(net, ckpt, data, {"fc1", "fc2"})) {
      CHECK(is_symmetric(g, 1e-10));
      const SymEigen eig = sym_eigen(g);
      CHECK(eig.eigenvalues.minCoeff() >= -1e-10);
    }
  }
}

TEST_CASE("jacobian and pseudo-gradient covariance forms agree") {
  NetworkSpec net;
  net.layers = {{"fc1", 4, 6, Nonlinearity::tanh},
                {"fc2", 6, 3, Nonlinearity::none}};
  const Checkpoint ckpt = random_checkpoint(net, 3);
  const Dataset data = random_dataset(32, 4, 3, 4);
  Rng rng(0);
  const CurvatureState state =
      fit_factors(net, ckpt, data, EstimatorKind::exact_dense,
                  FisherMode::enumeration(), {"fc1", "fc2"}, rng);
  const std::vector<Matrix> covariance_form = dense_reconstruct(state, net);
  const std::vector<Matrix> jacobian_form =
      exact_gauss_newton(net, ckpt, data, {"fc1", "fc2"});
  for (std::size_t t = 0; t < covariance_form.size(); ++t) {
    const double rel = (covariance_form[t] - jacobian_form[t]).norm() /
                       jacobian_form[t].norm();
    CHECK(rel <= 1e-10);
  }
}

TEST_CASE("retrain oracle with an empty forget set is bit identical") {
  const BlobsScenario sc = make_blobs_scenario(21);
  const NetworkSpec net = sc.config.model.network();
  const TrainConfig cfg = sc.config.train.train_config();
  auto [original, stats] = train_sgd(net, sc.train_all, cfg);
  (void)stats;
  const Checkpoint retrained = retrain_oracle(net, sc.train_all, cfg);
  CHECK(checkpoint_hash(original) == checkpoint_hash(retrained));
}

TEST_CASE("retraining raises the forget loss on learnable facts") {
  FactsParams p;
  p.entities = 16;
  p.attributes = 6;
  p.forget_entities = 4;
  p.hidden = 20;
  p.epochs = 250;
  const FactsScenario sc = make_facts_scenario(31, p);
  const NetworkSpec net = sc.config.model.network();
  const TrainConfig cfg = sc.config.train.train_config();
  auto [original, stats] = train_sgd(net, sc.train_all, cfg);
  (void)stats;
  const Checkpoint retrained = retrain_oracle(net, sc.retain, cfg);
  const double original_forget =
      dataset_loss(net, original, sc.forget, LossKind::cross_entropy);
  const double retrained_forget =
      dataset_loss(net, retrained, sc.forget, LossKind::cross_entropy);
  CHECK(retrained_forget > original_forget);
  // Retain behavior survives retraining.
  CHECK(dataset_accuracy(net, retrained, sc.retain) >= 0.95);
}

TEST_CASE("forgetting a zero-net-gradient pair barely changes retraining") {
  BlobsParams p;
  p.classes = 2;
  p.per_class = 80;
  p.center_scale = 3.0;
  p.noise = 0.8;
  p.forget_class = 1;
  p.epochs = 300;
  const BlobsScenario sc = make_blobs_scenario(41, p);
  const NetworkSpec net = sc.config.model.network();

  // A conflicting label pair at one input contributes no net pull at the
  // joint optimum.
  Dataset with_pair = sc.retain;
  Example conflicted;
  conflicted.x = Vector::Zero(p.dim);
  conflicted.y = 0;
  with_pair.examples.push_back(conflicted);
  conflicted.y = 1;
  with_pair.examples.push_back(conflicted);

  const TrainConfig cfg = sc.config.train.train_config();
  auto [full, s1] = train_sgd(net, with_pair, cfg);
  auto [retained, s2] = train_sgd(net, sc.retain, cfg);
  (void)s1;
  (void)s2;
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < full.weights.size(); ++l) {
    num += (full.weights[l] - retained.weights[l]).squaredNorm();
    den += retained.weights[l].squaredNorm();
  }
  CHECK(std::sqrt(num / den) <= 0.2);
  CHECK(dataset_accuracy(net, full, sc.retain) ==
        doctest::Approx(dataset_accuracy(net, retained, sc.retain)).epsilon(0.02));
}
