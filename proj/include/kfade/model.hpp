// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kfade/linalg.hpp"
#include "kfade/rng.hpp"

namespace kfade {

enum class Nonlinearity { relu, tanh, none };

Nonlinearity nonlinearity_from_string(const std::string& s);
std::string to_string(Nonlinearity nl);

struct LayerSpec {
  std::string name;
  int d_in = 0;
  int d_out = 0;
  Nonlinearity activation = Nonlinearity::none;
};

/// A stack of affine layers in homogeneous coordinates (the constant 1 is
/// appended to each layer input, so the bias is the last weight column).
/// The trailing layer must be linear; its outputs are the logits.
struct NetworkSpec {
  std::vector<LayerSpec> layers;

  void validate() const;
  int input_dim() const;
  int output_dim() const;
  int num_layers() const { return static_cast<int>(layers.size()); }
  int layer_index(const std::string& name) const;  // throws if absent
  int parameter_count() const;
};

struct Checkpoint {
  std::vector<Matrix> weights;  // per layer, d_out x (d_in + 1)
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  std::string provenance;
};

void validate_checkpoint(const NetworkSpec& net, const Checkpoint& ckpt);
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);

/// Per-layer quantities recorded during a forward/backward pair. Rows are
/// examples; activations keep the homogeneous 1 in the last column and
/// pseudo_grads holds raw per-example rows (no batch normalization), so
/// curvature fitting can apply its own weighting.
struct BatchCapture {
  std::vector<Matrix> activations;     // batch x (d_in + 1)
  std::vector<Matrix> preactivations;  // batch x d_out
  std::vector<Matrix> pseudo_grads;    // batch x d_out, filled by backward()
  Matrix logits;                       // batch x output_dim
  std::uint64_t checkpoint_hash = 0;   // weights the capture was taken under
};

/// Runs the network on a batch (rows are examples, feature width must match
/// input_dim). Throws on shape mismatch or non-finite intermediates.
BatchCapture forward(const NetworkSpec& net, const Checkpoint& ckpt,
                     const Matrix& inputs);

/// Backpropagates per-example logit gradients (rows) through the captured
/// batch. Returns mean parameter gradients per layer
/// (grad W = ds^T a / batch) and fills capture.pseudo_grads with the raw
/// per-example ds rows.
std::vector<Matrix> backward(const NetworkSpec& net, const Checkpoint& ckpt,
                             BatchCapture& capture, const Matrix& logit_grads);

// ---------------------------------------------------------------------------
// Losses on logits.

struct LossValue {
  double loss = 0.0;
  Vector logit_grad;
};

Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

/// Negative log-likelihood -z_y + logsumexp(z); gradient softmax(z) - e_y.
LossValue cross_entropy(const Vector& logits, int label);

/// Negative margin -z_y + logsumexp_{i != y}(z_i). Unlike cross-entropy it
/// does not saturate as the model grows confident in y. Requires >= 2
/// classes.
LossValue margin_loss(const Vector& logits, int label);

enum class LossKind { cross_entropy, margin };
LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind kind);

struct BatchLoss {
  double mean_loss = 0.0;
  Matrix logit_grads;  // per-example rows of the per-example loss gradient
};
BatchLoss batch_loss(LossKind kind, const Matrix& logits,
                     const std::vector<int>& labels);

/// d/dz log softmax(z)[label] = e_label - softmax(z).
Vector pseudo_grad_for_label(const Vector& logits, int label);

struct PseudoSample {
  int label = 0;
  Vector logit_grad;
};
/// Draws label ~ softmax(logits) and returns the pseudo-gradient for it.
PseudoSample sample_pseudo_label(const Vector& logits, Rng& rng);

// ---------------------------------------------------------------------------
// Data.

struct Example {
  Vector x;
  int y = 0;
};

struct Dataset {
  int feature_dim = 0;
  int num_classes = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  void validate() const;
  std::uint64_t fingerprint() const;
};

Matrix stack_features(const Dataset& data, const std::vector<int>& indices);
Matrix stack_features(const Dataset& data);

/// Mean loss of a checkpoint over a dataset; no gradients.
double dataset_loss(const NetworkSpec& net, const Checkpoint& ckpt,
                    const Dataset& data, LossKind kind);
double dataset_accuracy(const NetworkSpec& net, const Checkpoint& ckpt,
                        const Dataset& data);

/// Mean loss gradient over a dataset, one matrix per layer.
std::pair<double, std::vector<Matrix>> dataset_loss_gradient(
    const NetworkSpec& net, const Checkpoint& ckpt, const Dataset& data,
    LossKind kind);

// ---------------------------------------------------------------------------
// Token front end: a fixed context window is embedded as concatenated
// one-hot blocks, so the first affine layer consumes window * vocab inputs.

Vector one_hot_window(const std::vector<int>& window, int vocab);

/// Expands token sequences into (window, next-token) classification
/// examples. Sequences shorter than window + 1 contribute nothing.
Dataset expand_token_records(const std::vector<std::vector<int>>& records,
                             int window, int vocab);

Vector next_token_log_probs(const NetworkSpec& net, const Checkpoint& ckpt,
                            const std::vector<int>& window, int vocab);

/// Log probability of a continuation given a prompt, sliding the context
/// window one token at a time. Per-token log-probs are floored at
/// `per_token_floor` (default exp(-50)).
double sequence_log_prob(const NetworkSpec& net, const Checkpoint& ckpt,
                         const std::vector<int>& prompt,
                         const std::vector<int>& continuation, int window,
                         int vocab, double per_token_floor = -50.0);

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int epochs = 1;
  double lr = 0.1;
  int batch = 32;
  std::uint64_t seed = 0;
};

/// Gaussian init scaled by 1/sqrt(d_in + 1), bias column zero; derived
/// entirely from the seed.
Checkpoint init_checkpoint(const NetworkSpec& net, std::uint64_t seed);

struct TrainStats {
  double final_loss = 0.0;
  std::int64_t steps = 0;
};

/// Deterministic mini-batch SGD on mean cross-entropy, shuffling with a
/// SplitMix64 stream seeded from cfg.seed. Aborts with diagnostics if the
/// loss goes non-finite.
std::pair<Checkpoint, TrainStats> train_sgd(const NetworkSpec& net,
                                            const Dataset& data,
                                            const TrainConfig& cfg);

/// Same, but continuing from an explicit starting checkpoint (fine-tuning).
std::pair<Checkpoint, TrainStats> train_sgd_from(const NetworkSpec& net,
                                                 const Checkpoint& start,
                                                 const Dataset& data,
                                                 const TrainConfig& cfg);

}  // namespace kfade
