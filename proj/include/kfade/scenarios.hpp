// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kfade/config.hpp"

namespace kfade {

/// Fictitious-facts language task: each entity token is deterministically
/// paired with an attribute token, the model learns [entity] -> attribute
/// with a one-token context window, and a held-out subset of entities forms
/// the forget set. Truth-ratio questions pair each forget entity with its
/// true attribute and a few perturbed attributes.
struct FactsParams {
  int entities = 40;
  int attributes = 12;
  int forget_entities = 10;
  int hidden = 36;
  int perturbed_per_question = 3;
  int epochs = 400;
  double lr = 0.5;
  int batch = 8;
};

struct FactsScenario {
  RunConfig config;
  Dataset train_all;    // every fact
  Dataset retain;       // retain-entity facts
  Dataset forget;       // forget-entity facts
  Dataset retain_eval;  // KL positions over retain facts
  std::vector<TruthRatioItem> truth_items;
  std::vector<std::vector<int>> records_retain;
  std::vector<std::vector<int>> records_forget;
};

FactsScenario make_facts_scenario(std::uint64_t seed, const FactsParams& params = {});

/// Gaussian blob classifier: one class is the forget domain, the rest are
/// retained. hidden == 0 builds a single linear softmax layer.
struct BlobsParams {
  int dim = 6;
  int classes = 4;
  int per_class = 100;
  int eval_per_class = 50;
  double center_scale = 2.5;
  double noise = 1.0;
  int hidden = 16;
  int forget_class = 3;
  int epochs = 200;
  double lr = 0.2;
  int batch = 32;
};

struct BlobsScenario {
  RunConfig config;
  Dataset train_all;
  Dataset retain;
  Dataset forget;
  Dataset retain_eval;  // fresh draws from the retain classes
};

BlobsScenario make_blobs_scenario(std::uint64_t seed, const BlobsParams& params = {});

/// Writes the scenario's datasets and a ready-to-run config into dir.
void write_facts_scenario(const std::filesystem::path& dir,
                          const FactsScenario& scenario);
void write_blobs_scenario(const std::filesystem::path& dir,
                          const BlobsScenario& scenario);

}  // namespace kfade
