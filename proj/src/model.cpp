// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace kfade {

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "relu") return Nonlinearity::relu;
  if (s == "tanh") return Nonlinearity::tanh;
  if (s == "none") return Nonlinearity::none;
  throw Error::config("unknown nonlinearity '" + s + "'");
}

std::string to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::relu: return "relu";
    case Nonlinearity::tanh: return "tanh";
    case Nonlinearity::none: return "none";
  }
  return "none";
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw Error::config("network has no layers");
  std::set<std::string> names;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.name.empty()) throw Error::config("layer name must be nonempty");
    if (!names.insert(l.name).second) {
      throw Error::config("duplicate layer name '" + l.name + "'");
    }
    if (l.d_in <= 0 || l.d_out <= 0) {
      throw Error::config("layer '" + l.name + "' has nonpositive dimensions");
    }
    if (i + 1 < layers.size() && layers[i + 1].d_in != l.d_out) {
      throw Error::config("layer '" + layers[i + 1].name +
                          "' input dim does not match previous output dim");
    }
  }
  if (layers.back().activation != Nonlinearity::none) {
    throw Error::config("trailing layer must use 'none' (logits)");
  }
}

int NetworkSpec::input_dim() const { return layers.front().d_in; }
int NetworkSpec::output_dim() const { return layers.back().d_out; }

int NetworkSpec::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return static_cast<int>(i);
  }
  throw Error::config("layer '" + name + "' not found");
}

int NetworkSpec::parameter_count() const {
  int n = 0;
  for (const LayerSpec& l : layers) n += l.d_out * (l.d_in + 1);
  return n;
}

void validate_checkpoint(const NetworkSpec& net, const Checkpoint& ckpt) {
  if (ckpt.weights.size() != net.layers.size()) {
    throw Error::config("checkpoint layer count does not match network");
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    const Matrix& w = ckpt.weights[i];
    if (w.rows() != l.d_out || w.cols() != l.d_in + 1) {
      throw Error::config("checkpoint weight shape mismatch in layer '" +
                          l.name + "'");
    }
    if (!all_finite(w)) {
      throw Error::numeric("checkpoint has non-finite weights in layer '" +
                           l.name + "'");
    }
  }
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  return hash_matrices(ckpt.weights);
}

static Matrix append_homogeneous(const Matrix& h) {
  Matrix a(h.rows(), h.cols() + 1);
  a.leftCols(h.cols()) = h;
  a.col(h.cols()).setOnes();
  return a;
}

BatchCapture forward(const NetworkSpec& net, const Checkpoint& ckpt,
                     const Matrix& inputs) {
  validate_checkpoint(net, ckpt);
  if (inputs.cols() != net.input_dim()) {
    throw Error::config("forward: input width does not match network");
  }
  BatchCapture cap;
  cap.checkpoint_hash = checkpoint_hash(ckpt);
  cap.activations.reserve(net.layers.size());
  cap.preactivations.reserve(net.layers.size());
  Matrix h = inputs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Matrix a = append_homogeneous(h);
    const Matrix s = a * ckpt.weights[i].transpose();
    if (!all_finite(s)) {
      throw Error::numeric("forward: non-finite pre-activation in layer '" +
                           net.layers[i].name + "'");
    }
    cap.activations.push_back(a);
    cap.preactivations.push_back(s);
    switch (net.layers[i].activation) {
      case Nonlinearity::relu: h = s.cwiseMax(0.0); break;
      case Nonlinearity::tanh: h = s.array().tanh().matrix(); break;
      case Nonlinearity::none: h = s; break;
    }
  }
  cap.logits = h;
  return cap;
}

std::vector<Matrix> backward(const NetworkSpec& net, const Checkpoint& ckpt,
                             BatchCapture& capture, const Matrix& logit_grads) {
  const int n_layers = net.num_layers();
  if (static_cast<int>(capture.activations.size()) != n_layers) {
    throw Error::config("backward: capture does not match network");
  }
  if (capture.checkpoint_hash != checkpoint_hash(ckpt)) {
    throw Error::config("backward: capture is stale (weights changed since forward)");
  }
  const Eigen::Index batch = capture.logits.rows();
  if (logit_grads.rows() != batch || logit_grads.cols() != net.output_dim()) {
    throw Error::config("backward: logit gradient shape mismatch");
  }
  capture.pseudo_grads.assign(n_layers, Matrix());
  std::vector<Matrix> grads(n_layers);

  Matrix ds = logit_grads;  // trailing layer is linear
  for (int l = n_layers - 1; l >= 0; --l) {
    capture.pseudo_grads[l] = ds;
    grads[l] = ds.transpose() * capture.activations[l] / static_cast<double>(batch);
    if (l > 0) {
      Matrix da = ds * ckpt.weights[l];
      Matrix dh = da.leftCols(net.layers[l].d_in);  // drop the homogeneous column
      const Matrix& s_prev = capture.preactivations[l - 1];
      switch (net.layers[l - 1].activation) {
        case Nonlinearity::relu:
          ds = dh.cwiseProduct((s_prev.array() > 0.0).cast<double>().matrix());
          break;
        case Nonlinearity::tanh:
          ds = dh.cwiseProduct((1.0 - s_prev.array().tanh().square()).matrix());
          break;
        case Nonlinearity::none:
          ds = dh;
          break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

Vector softmax(const Vector& logits) {
  return log_softmax(logits).array().exp();
}

LossValue cross_entropy(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw Error::config("cross_entropy: class index out of range");
  }
  const Vector logp = log_softmax(logits);
  LossValue out;
  out.loss = -logp(label);
  out.logit_grad = logp.array().exp();
  out.logit_grad(label) -= 1.0;
  return out;
}

LossValue margin_loss(const Vector& logits, int label) {
  if (logits.size() < 2) {
    throw Error::config("margin_loss: needs at least 2 classes");
  }
  if (label < 0 || label >= logits.size()) {
    throw Error::config("margin_loss: class index out of range");
  }
  // logsumexp over competitors only, with max-shift.
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (i != label) m = std::max(m, logits(i));
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (i != label) total += std::exp(logits(i) - m);
  }
  const double lse = m + std::log(total);
  LossValue out;
  out.loss = -logits(label) + lse;
  out.logit_grad = Vector::Zero(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (i != label) out.logit_grad(i) = std::exp(logits(i) - m) / total;
  }
  out.logit_grad(label) = -1.0;
  return out;
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "margin") return LossKind::margin;
  throw Error::config("unknown loss '" + s + "'");
}

std::string to_string(LossKind kind) {
  return kind == LossKind::cross_entropy ? "cross_entropy" : "margin";
}

BatchLoss batch_loss(LossKind kind, const Matrix& logits,
                     const std::vector<int>& labels) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw Error::config("batch_loss: label count does not match batch");
  }
  BatchLoss out;
  out.logit_grads = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const Vector z = logits.row(b).transpose();
    const LossValue lv = kind == LossKind::cross_entropy
                             ? cross_entropy(z, labels[b])
                             : margin_loss(z, labels[b]);
    out.mean_loss += lv.loss;
    out.logit_grads.row(b) = lv.logit_grad.transpose();
  }
  out.mean_loss /= static_cast<double>(logits.rows());
  return out;
}

Vector pseudo_grad_for_label(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw Error::config("pseudo_grad_for_label: class index out of range");
  }
  Vector g = -softmax(logits);
  g(label) += 1.0;
  return g;
}

PseudoSample sample_pseudo_label(const Vector& logits, Rng& rng) {
  const Vector p = softmax(logits);
  std::vector<double> weights(p.data(), p.data() + p.size());
  PseudoSample out;
  out.label = rng.categorical(weights);
  out.logit_grad = pseudo_grad_for_label(logits, out.label);
  return out;
}

// ---------------------------------------------------------------------------

void Dataset::validate() const {
  if (feature_dim <= 0 || num_classes <= 0) {
    throw Error::config("dataset has nonpositive dimensions");
  }
  for (const Example& e : examples) {
    if (e.x.size() != feature_dim) {
      throw Error::config("dataset example feature width mismatch");
    }
    if (e.y < 0 || e.y >= num_classes) {
      throw Error::config("dataset label out of range");
    }
  }
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::uint64_t header[3] = {static_cast<std::uint64_t>(feature_dim),
                                   static_cast<std::uint64_t>(num_classes),
                                   static_cast<std::uint64_t>(examples.size())};
  h = fnv1a(header, sizeof header, h);
  for (const Example& e : examples) {
    h = fnv1a(e.x.data(), sizeof(double) * e.x.size(), h);
    h = fnv1a(&e.y, sizeof e.y, h);
  }
  return h;
}

Matrix stack_features(const Dataset& data, const std::vector<int>& indices) {
  Matrix x(indices.size(), data.feature_dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    x.row(r) = data.examples[indices[r]].x.transpose();
  }
  return x;
}

Matrix stack_features(const Dataset& data) {
  std::vector<int> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return stack_features(data, idx);
}

double dataset_loss(const NetworkSpec& net, const Checkpoint& ckpt,
                    const Dataset& data, LossKind kind) {
  if (data.empty()) throw Error::config("dataset_loss: empty dataset");
  const BatchCapture cap = forward(net, ckpt, stack_features(data));
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector z = cap.logits.row(i).transpose();
    total += (kind == LossKind::cross_entropy ? cross_entropy(z, data.examples[i].y)
                                              : margin_loss(z, data.examples[i].y))
                 .loss;
  }
  return total / static_cast<double>(data.size());
}

double dataset_accuracy(const NetworkSpec& net, const Checkpoint& ckpt,
                        const Dataset& data) {
  if (data.empty()) throw Error::config("dataset_accuracy: empty dataset");
  const BatchCapture cap = forward(net, ckpt, stack_features(data));
  int correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Eigen::Index argmax;
    cap.logits.row(i).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == data.examples[i].y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::pair<double, std::vector<Matrix>> dataset_loss_gradient(
    const NetworkSpec& net, const Checkpoint& ckpt, const Dataset& data,
    LossKind kind) {
  if (data.empty()) throw Error::config("dataset_loss_gradient: empty dataset");
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data.examples[i].y;
  BatchCapture cap = forward(net, ckpt, stack_features(data));
  const BatchLoss bl = batch_loss(kind, cap.logits, labels);
  std::vector<Matrix> grads = backward(net, ckpt, cap, bl.logit_grads);
  return {bl.mean_loss, std::move(grads)};
}

// ---------------------------------------------------------------------------

Vector one_hot_window(const std::vector<int>& window, int vocab) {
  Vector x = Vector::Zero(static_cast<Eigen::Index>(window.size()) * vocab);
  for (std::size_t p = 0; p < window.size(); ++p) {
    const int t = window[p];
    if (t < 0 || t >= vocab) throw Error::config("token id out of range");
    x(static_cast<Eigen::Index>(p) * vocab + t) = 1.0;
  }
  return x;
}

Dataset expand_token_records(const std::vector<std::vector<int>>& records,
                             int window, int vocab) {
  if (window <= 0 || vocab <= 0) {
    throw Error::config("expand_token_records: window and vocab must be positive");
  }
  Dataset data;
  data.feature_dim = window * vocab;
  data.num_classes = vocab;
  for (const auto& tokens : records) {
    if (static_cast<int>(tokens.size()) < window + 1) continue;
    for (std::size_t i = window; i < tokens.size(); ++i) {
      std::vector<int> ctx(tokens.begin() + (i - window), tokens.begin() + i);
      data.examples.push_back({one_hot_window(ctx, vocab), tokens[i]});
    }
  }
  data.validate();
  return data;
}

Vector next_token_log_probs(const NetworkSpec& net, const Checkpoint& ckpt,
                            const std::vector<int>& window, int vocab) {
  const Vector x = one_hot_window(window, vocab);
  const BatchCapture cap = forward(net, ckpt, x.transpose());
  return log_softmax(cap.logits.row(0).transpose());
}

double sequence_log_prob(const NetworkSpec& net, const Checkpoint& ckpt,
                         const std::vector<int>& prompt,
                         const std::vector<int>& continuation, int window,
                         int vocab, double per_token_floor) {
  if (static_cast<int>(prompt.size()) < window) {
    throw Error::config("sequence_log_prob: prompt shorter than context window");
  }
  if (continuation.empty()) {
    throw Error::config("sequence_log_prob: empty continuation");
  }
  std::vector<int> context = prompt;
  double total = 0.0;
  for (int t : continuation) {
    if (t < 0 || t >= vocab) throw Error::config("token id out of range");
    std::vector<int> win(context.end() - window, context.end());
    const Vector logp = next_token_log_probs(net, ckpt, win, vocab);
    total += std::max(logp(t), per_token_floor);
    context.push_back(t);
  }
  return total;
}

// ---------------------------------------------------------------------------

Checkpoint init_checkpoint(const NetworkSpec& net, std::uint64_t seed) {
  net.validate();
  Rng rng(seed);
  Checkpoint ckpt;
  ckpt.seed = seed;
  ckpt.provenance = "init";
  for (const LayerSpec& l : net.layers) {
    Matrix w(l.d_out, l.d_in + 1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.d_in + 1));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols() - 1; ++j) {
        w(i, j) = scale * rng.normal();
      }
    }
    w.col(w.cols() - 1).setZero();
    ckpt.weights.push_back(std::move(w));
  }
  return ckpt;
}

std::pair<Checkpoint, TrainStats> train_sgd_from(const NetworkSpec& net,
                                                 const Checkpoint& start,
                                                 const Dataset& data,
                                                 const TrainConfig& cfg) {
  net.validate();
  data.validate();
  validate_checkpoint(net, start);
  if (data.empty()) throw Error::config("train_sgd: empty dataset");
  if (data.feature_dim != net.input_dim() || data.num_classes != net.output_dim()) {
    throw Error::config("train_sgd: dataset does not match network dimensions");
  }
  if (cfg.epochs < 0 || cfg.batch <= 0) {
    throw Error::config("train_sgd: invalid epochs/batch");
  }

  Checkpoint ckpt = start;
  Rng shuffle_rng(cfg.seed ^ 0x5bd1e995u);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t steps = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch);
      std::vector<int> idx(order.begin() + begin, order.begin() + end);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        labels[i] = data.examples[idx[i]].y;
      }
      BatchCapture cap = forward(net, ckpt, stack_features(data, idx));
      const BatchLoss bl = batch_loss(LossKind::cross_entropy, cap.logits, labels);
      if (!std::isfinite(bl.mean_loss)) {
        std::ostringstream oss;
        oss << "train_sgd diverged: loss " << bl.mean_loss << " at epoch "
            << epoch << " step " << steps;
        throw Error::numeric(oss.str());
      }
      const std::vector<Matrix> grads = backward(net, ckpt, cap, bl.logit_grads);
      for (std::size_t l = 0; l < ckpt.weights.size(); ++l) {
        ckpt.weights[l] -= cfg.lr * grads[l];
      }
      ++steps;
    }
  }

  TrainStats stats;
  stats.steps = steps;
  stats.final_loss = dataset_loss(net, ckpt, data, LossKind::cross_entropy);
  ckpt.steps += steps;
  return {std::move(ckpt), stats};
}

std::pair<Checkpoint, TrainStats> train_sgd(const NetworkSpec& net,
                                            const Dataset& data,
                                            const TrainConfig& cfg) {
  Checkpoint init = init_checkpoint(net, cfg.seed);
  auto [ckpt, stats] = train_sgd_from(net, init, data, cfg);
  ckpt.seed = cfg.seed;
  ckpt.provenance = "train_sgd";
  return {std::move(ckpt), stats};
}

}  // namespace kfade
