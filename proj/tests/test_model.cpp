// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kfade/model.hpp"
#include "kfade/scenarios.hpp"

using namespace kfade;

namespace {

NetworkSpec one_layer(int d_in, int d_out) {
  NetworkSpec net;
  net.layers = {{"fc1", d_in, d_out, Nonlinearity::none}};
  return net;
}

NetworkSpec three_layer_tanh(int d) {
  NetworkSpec net;
  net.layers = {{"fc1", d, d + 1, Nonlinearity::tanh},
                {"fc2", d + 1, d, Nonlinearity::tanh},
                {"fc3", d, 3, Nonlinearity::none}};
  return net;
}

Checkpoint random_checkpoint(const NetworkSpec& net, std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint ckpt;
  for (const LayerSpec& l : net.layers) {
    Matrix w(l.d_out, l.d_in + 1);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w(i / w.cols(), i % w.cols()) = 0.5 * rng.normal();
    }
    ckpt.weights.push_back(std::move(w));
  }
  return ckpt;
}

/// Scalar objective used by the finite-difference oracle: mean loss of the
/// batch under the given checkpoint. Kept independent of backward().
double objective(const NetworkSpec& net, const Checkpoint& ckpt, const Matrix& x,
                 const std::vector<int>& labels, LossKind kind) {
  const BatchCapture cap = forward(net, ckpt, x);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Vector z = cap.logits.row(i).transpose();
    total += (kind == LossKind::cross_entropy ? cross_entropy(z, labels[i])
                                              : margin_loss(z, labels[i]))
                 .loss;
  }
  return total / static_cast<double>(labels.size());
}

/// Central finite differences over every parameter.
std::vector<Matrix> fd_gradient(const NetworkSpec& net, const Checkpoint& ckpt,
                                const Matrix& x, const std::vector<int>& labels,
                                LossKind kind, double h = 1e-5) {
  std::vector<Matrix> grads;
  for (std::size_t l = 0; l < ckpt.weights.size(); ++l) {
    Matrix g(ckpt.weights[l].rows(), ckpt.weights[l].cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        Checkpoint plus = ckpt, minus = ckpt;
        plus.weights[l](i, j) += h;
        minus.weights[l](i, j) -= h;
        g(i, j) = (objective(net, plus, x, labels, kind) -
                   objective(net, minus, x, labels, kind)) /
                  (2.0 * h);
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double max_rel_err(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double max_diff = 0.0, max_ref = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    max_diff = std::max(max_diff, (a[l] - b[l]).cwiseAbs().maxCoeff());
    max_ref = std::max(max_ref, b[l].cwiseAbs().maxCoeff());
  }
  return max_diff / std::max(max_ref, 1e-12);
}

}  // namespace

TEST_CASE("forward zero and identity weights") {
  const NetworkSpec net = one_layer(3, 3);
  Checkpoint zero;
  zero.weights = {Matrix::Zero(3, 4)};
  Matrix x(2, 3);
  x << 1, 2, 3, -1, 0, 4;
  CHECK(forward(net, zero, x).logits.isZero(0.0));

  Checkpoint ident;
  ident.weights = {Matrix::Zero(3, 4)};
  ident.weights[0].leftCols(3) = Matrix::Identity(3, 3);
  CHECK((forward(net, ident, x).logits - x).norm() == 0.0);
}

TEST_CASE("forward hand-evaluated affine layer") {
  // weight 2, bias 1 on scalar input 1 -> logit 3.
  const NetworkSpec net = one_layer(1, 1);
  Checkpoint ckpt;
  ckpt.weights = {Matrix(1, 2)};
  ckpt.weights[0] << 2, 1;
  Matrix x(1, 1);
  x << 1;
  CHECK(forward(net, ckpt, x).logits(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("forward captures homogeneous activations") {
  const NetworkSpec net = three_layer_tanh(4);
  const Checkpoint ckpt = random_checkpoint(net, 3);
  Matrix x(5, 4);
  Rng rng(5);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x(i / x.cols(), i % x.cols()) = rng.normal();
  }
  const BatchCapture cap = forward(net, ckpt, x);
  for (const Matrix& a : cap.activations) {
    CHECK((a.col(a.cols() - 1).array() == 1.0).all());
  }
  CHECK(forward(net, ckpt, x).logits == cap.logits);
}

TEST_CASE("cross_entropy closed forms") {
  Vector z2(2);
  z2 << 0, 0;
  CHECK(cross_entropy(z2, 0).loss == doctest::Approx(std::log(2.0)));

  Vector z3(3);
  z3 << 10, 10, 10;
  CHECK(cross_entropy(z3, 2).loss == doctest::Approx(std::log(3.0)));

  Vector z(2);
  z << 2, 0;
  CHECK(cross_entropy(z, 0).loss ==
        doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(z, 5), Error);
}

TEST_CASE("margin_loss closed forms") {
  Vector z2(2);
  z2 << 0, 0;
  CHECK(margin_loss(z2, 0).loss == doctest::Approx(0.0));

  Vector z3(3);
  z3 << 2, 0, 0;
  CHECK(margin_loss(z3, 0).loss == doctest::Approx(-2.0 + std::log(2.0)));

  Vector z(2);
  z << 0, 5;
  CHECK(margin_loss(z, 1).loss == doctest::Approx(-5.0));

  Vector z1(1);
  z1 << 0;
  CHECK_THROWS_AS(margin_loss(z1, 0), Error);
}

TEST_CASE("loss logit gradients match finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 2 + static_cast<int>(rng.bounded(7));
    Vector z(dim);
    for (int i = 0; i < dim; ++i) z(i) = 2.0 * rng.normal();
    const int y = static_cast<int>(rng.bounded(dim));
    for (const LossKind kind : {LossKind::cross_entropy, LossKind::margin}) {
      const LossValue lv =
          kind == LossKind::cross_entropy ? cross_entropy(z, y) : margin_loss(z, y);
      const double h = 1e-6;
      for (int i = 0; i < dim; ++i) {
        Vector zp = z, zm = z;
        zp(i) += h;
        zm(i) -= h;
        const double fd =
            ((kind == LossKind::cross_entropy ? cross_entropy(zp, y)
                                              : margin_loss(zp, y))
                 .loss -
             (kind == LossKind::cross_entropy ? cross_entropy(zm, y)
                                              : margin_loss(zm, y))
                 .loss) /
            (2.0 * h);
        CHECK(std::abs(fd - lv.logit_grad(i)) <= 1e-8);
      }
    }
  }
}

TEST_CASE("backward zero and outer-product cases") {
  const NetworkSpec net = one_layer(1, 2);
  Checkpoint ckpt;
  ckpt.weights = {Matrix::Zero(2, 2)};
  Matrix x(1, 1);
  x << 1;

  BatchCapture cap = forward(net, ckpt, x);
  const std::vector<Matrix> zero_grads =
      backward(net, ckpt, cap, Matrix::Zero(1, 2));
  CHECK(zero_grads[0].isZero(0.0));

  Matrix dz(1, 2);
  dz << 0.5, -0.5;
  cap = forward(net, ckpt, x);
  const std::vector<Matrix> grads = backward(net, ckpt, cap, dz);
  Matrix expect(2, 2);
  expect << 0.5, 0.5, -0.5, -0.5;
  CHECK((grads[0] - expect).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((cap.pseudo_grads[0] - dz).norm() == 0.0);
}

TEST_CASE("backprop matches the finite-difference oracle on a 3-layer tanh net") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 3 + static_cast<int>(rng.bounded(4));
    const NetworkSpec net = three_layer_tanh(d);
    const Checkpoint ckpt = random_checkpoint(net, 100 + trial);
    const int batch = 4;
    Matrix x(batch, d);
    std::vector<int> labels(batch);
    for (int b = 0; b < batch; ++b) {
      for (int j = 0; j < d; ++j) x(b, j) = rng.normal();
      labels[b] = static_cast<int>(rng.bounded(3));
    }
    BatchCapture cap = forward(net, ckpt, x);
    const BatchLoss bl = batch_loss(LossKind::cross_entropy, cap.logits, labels);
    const std::vector<Matrix> analytic = backward(net, ckpt, cap, bl.logit_grads);
    const std::vector<Matrix> numeric =
        fd_gradient(net, ckpt, x, labels, LossKind::cross_entropy);
    CHECK(max_rel_err(analytic, numeric) <= 1e-6);
  }
}

TEST_CASE("pseudo gradients: closed form, expectation identity, sampling") {
  Vector z(2);
  z << 0, 0;
  const Vector g0 = pseudo_grad_for_label(z, 0);
  CHECK(g0(0) == doctest::Approx(0.5));
  CHECK(g0(1) == doctest::Approx(-0.5));

  // Enumeration expectation sum_y p_y (e_y - p) is exactly zero.
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Vector logits(4);
    for (int i = 0; i < 4; ++i) logits(i) = 2.0 * rng.normal();
    const Vector p = softmax(logits);
    Vector expect = Vector::Zero(4);
    for (int y = 0; y < 4; ++y) expect += p(y) * pseudo_grad_for_label(logits, y);
    CHECK(expect.cwiseAbs().maxCoeff() <= 1e-15);
  }

  // A dominant logit is sampled essentially always.
  Vector dominated(3);
  dominated << 50, 0, 0;
  Rng sample_rng(123);
  int hits = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    hits += sample_pseudo_label(dominated, sample_rng).label == 0;
  }
  CHECK(static_cast<double>(hits) / draws >= 0.999);
}

TEST_CASE("train_sgd zero learning rate keeps the initialization") {
  BlobsScenario sc = make_blobs_scenario(1);
  const NetworkSpec net = sc.config.model.network();
  TrainConfig cfg{5, 0.0, 16, 42};
  auto [ckpt, stats] = train_sgd(net, sc.train_all, cfg);
  const Checkpoint init = init_checkpoint(net, 42);
  CHECK(checkpoint_hash(ckpt) == checkpoint_hash(init));
  (void)stats;
}

TEST_CASE("train_sgd fits separable blobs and is bit-deterministic") {
  BlobsParams p;
  p.classes = 2;
  p.per_class = 60;
  p.center_scale = 4.0;
  p.noise = 0.6;
  p.forget_class = 1;
  BlobsScenario sc = make_blobs_scenario(3, p);
  const NetworkSpec net = sc.config.model.network();
  TrainConfig cfg{50, 0.2, 16, 7};
  auto [ckpt, stats] = train_sgd(net, sc.train_all, cfg);
  CHECK(dataset_accuracy(net, ckpt, sc.train_all) >= 0.99);
  auto [again, stats2] = train_sgd(net, sc.train_all, cfg);
  CHECK(checkpoint_hash(ckpt) == checkpoint_hash(again));
  CHECK(stats.final_loss == stats2.final_loss);
}

TEST_CASE("train_sgd aborts on divergence") {
  // A relu hidden layer lets runaway steps feed back into the activations
  // until something overflows; tanh nets merely grow, so they stay finite.
  BlobsScenario sc = make_blobs_scenario(4);
  NetworkSpec net = sc.config.model.network();
  net.layers[0].activation = Nonlinearity::relu;
  TrainConfig cfg{200, 1e40, 32, 0};
  CHECK_THROWS_AS(train_sgd(net, sc.train_all, cfg), Error);
}

TEST_CASE("token front end: one-hot windows and sequence probabilities") {
  const Vector x = one_hot_window({2, 0}, 3);
  CHECK(x.size() == 6);
  CHECK(x(2) == 1.0);
  CHECK(x(3) == 1.0);
  CHECK(x.sum() == doctest::Approx(2.0));

  const Dataset data = expand_token_records({{0, 1, 2}, {1}}, 1, 3);
  CHECK(data.size() == 2);  // the length-1 record contributes nothing
  CHECK(data.examples[0].y == 1);
  CHECK(data.examples[1].y == 2);

  // With zero weights every next-token distribution is uniform.
  NetworkSpec net;
  net.layers = {{"fc1", 3, 3, Nonlinearity::none}};
  Checkpoint ckpt;
  ckpt.weights = {Matrix::Zero(3, 4)};
  const double logp = sequence_log_prob(net, ckpt, {0}, {1, 2}, 1, 3);
  CHECK(logp == doctest::Approx(2.0 * std::log(1.0 / 3.0)));
}

TEST_CASE("backward rejects a stale capture") {
  const NetworkSpec net = one_layer(2, 2);
  Checkpoint ckpt;
  ckpt.weights = {Matrix::Zero(2, 3)};
  Matrix x(1, 2);
  x << 1, -1;
  BatchCapture cap = forward(net, ckpt, x);
  ckpt.weights[0](0, 0) = 1.0;  // weights move after the forward pass
  CHECK_THROWS_AS(backward(net, ckpt, cap, Matrix::Ones(1, 2)), Error);
}

TEST_CASE("network validation rejects bad specs") {
  NetworkSpec dupe;
  dupe.layers = {{"a", 2, 3, Nonlinearity::tanh}, {"a", 3, 2, Nonlinearity::none}};
  CHECK_THROWS_AS(dupe.validate(), Error);

  NetworkSpec chain;
  chain.layers = {{"a", 2, 3, Nonlinearity::tanh}, {"b", 4, 2, Nonlinearity::none}};
  CHECK_THROWS_AS(chain.validate(), Error);

  NetworkSpec trailing;
  trailing.layers = {{"a", 2, 3, Nonlinearity::relu}};
  CHECK_THROWS_AS(trailing.validate(), Error);
}
