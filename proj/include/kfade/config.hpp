// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kfade/evalmetrics.hpp"
#include "kfade/model.hpp"
#include "kfade/unlearn.hpp"

namespace kfade {

struct ModelConfig {
  std::vector<LayerSpec> layers;
  std::string task;  // "classify" | "lm"
  int context_window = 0;
  int vocab = 0;

  NetworkSpec network() const;
};

struct TrainBlock {
  int epochs = 1;
  double lr = 0.1;
  int batch = 32;
  std::uint64_t seed = 0;

  TrainConfig train_config() const { return {epochs, lr, batch, seed}; }
};

struct UnlearnBlock {
  std::string estimator = "kfac";
  std::string fisher_mode = "auto";  // auto | exact_enumeration | monte_carlo
  int mc_samples = 1;
  int steps = 1;
  double step_size = 1e-2;
  double damping = 1e-8;
  std::string loss = "cross_entropy";
  std::vector<std::string> target_layers;  // empty means all layers
  bool refit_every_step = true;
  std::uint64_t seed = 0;

  UnlearnPlan plan(const NetworkSpec& net) const;
};

struct EvalBlock {
  int bootstrap_n = 1000;
  std::string ks_mode = "asymptotic";
};

struct PathsBlock {
  std::string dataset_retain;
  std::string dataset_forget;
  std::string dataset_eval;
  std::string checkpoints_dir;
};

struct RunConfig {
  ModelConfig model;
  TrainBlock train;
  UnlearnBlock unlearn;
  EvalBlock eval;
  PathsBlock paths;

  nlohmann::json to_json() const;
};

/// Strict parse: unknown keys anywhere are rejected with the offending key
/// named in the error.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

/// JSON Lines loader for training data. Classification records are
/// {"x":[...],"y":n}; token records are {"tokens":[...]} and expand into
/// (window, next-token) examples using the model's context window and vocab.
Dataset load_training_dataset(const std::filesystem::path& path,
                              const ModelConfig& model);

/// Evaluation files may additionally carry truth-ratio records
/// {"id":..., "question":[...], "answer":[...], "perturbed":[[...],...]}.
struct EvalData {
  Dataset positions;  // KL / loss positions (may be empty)
  std::vector<TruthRatioItem> truth_items;
};
EvalData load_eval_dataset(const std::filesystem::path& path,
                           const ModelConfig& model);

}  // namespace kfade
