// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/scenarios.hpp"

#include <fstream>
#include <numeric>

#include <json.hpp>

namespace kfade {

using nlohmann::json;

FactsScenario make_facts_scenario(std::uint64_t seed, const FactsParams& p) {
  if (p.forget_entities <= 0 || p.forget_entities >= p.entities) {
    throw Error::config("facts scenario: forget_entities must split the entities");
  }
  if (p.perturbed_per_question >= p.attributes) {
    throw Error::config("facts scenario: not enough attributes for perturbations");
  }
  Rng rng(seed ^ 0xfac75ULL);
  const int vocab = p.entities + p.attributes;

  std::vector<int> attribute_of(p.entities);
  for (int e = 0; e < p.entities; ++e) {
    attribute_of[e] = p.entities + static_cast<int>(rng.bounded(p.attributes));
  }

  std::vector<int> entity_order(p.entities);
  std::iota(entity_order.begin(), entity_order.end(), 0);
  rng.shuffle(entity_order);
  const std::vector<int> forget_entities(entity_order.begin(),
                                         entity_order.begin() + p.forget_entities);
  const std::vector<int> retain_entities(entity_order.begin() + p.forget_entities,
                                         entity_order.end());

  FactsScenario sc;
  std::vector<std::vector<int>> records_all;
  for (int e : retain_entities) {
    sc.records_retain.push_back({e, attribute_of[e]});
    records_all.push_back({e, attribute_of[e]});
  }
  for (int e : forget_entities) {
    sc.records_forget.push_back({e, attribute_of[e]});
    records_all.push_back({e, attribute_of[e]});
  }

  sc.train_all = expand_token_records(records_all, 1, vocab);
  sc.retain = expand_token_records(sc.records_retain, 1, vocab);
  sc.forget = expand_token_records(sc.records_forget, 1, vocab);
  sc.retain_eval = sc.retain;

  for (int e : forget_entities) {
    TruthRatioItem item;
    item.id = "entity_" + std::to_string(e);
    item.question = {e};
    item.answer = {attribute_of[e]};
    while (static_cast<int>(item.perturbed.size()) < p.perturbed_per_question) {
      const int candidate = p.entities + static_cast<int>(rng.bounded(p.attributes));
      if (candidate == attribute_of[e]) continue;
      bool duplicate = false;
      for (const auto& existing : item.perturbed) {
        if (existing[0] == candidate) duplicate = true;
      }
      if (!duplicate) item.perturbed.push_back({candidate});
    }
    sc.truth_items.push_back(std::move(item));
  }

  RunConfig cfg;
  cfg.model.task = "lm";
  cfg.model.context_window = 1;
  cfg.model.vocab = vocab;
  cfg.model.layers = {
      {"fc1", vocab, p.hidden, Nonlinearity::tanh},
      {"fc2", p.hidden, vocab, Nonlinearity::none},
  };
  cfg.train = {p.epochs, p.lr, p.batch, seed};
  cfg.unlearn.estimator = "kfac";
  cfg.unlearn.fisher_mode = "auto";
  cfg.unlearn.steps = 1;
  cfg.unlearn.step_size = 8e-4;
  cfg.unlearn.damping = 1e-8;
  cfg.unlearn.loss = "cross_entropy";
  cfg.unlearn.refit_every_step = true;
  cfg.unlearn.seed = seed;
  cfg.eval.bootstrap_n = 200;
  sc.config = cfg;
  return sc;
}

BlobsScenario make_blobs_scenario(std::uint64_t seed, const BlobsParams& p) {
  if (p.forget_class < 0 || p.forget_class >= p.classes) {
    throw Error::config("blobs scenario: forget_class out of range");
  }
  Rng rng(seed ^ 0xb10b5ULL);

  Matrix centers(p.classes, p.dim);
  for (Eigen::Index i = 0; i < centers.rows(); ++i) {
    for (Eigen::Index j = 0; j < centers.cols(); ++j) {
      centers(i, j) = p.center_scale * rng.normal();
    }
  }

  const auto draw = [&](int cls) {
    Example e;
    e.x = Vector(p.dim);
    for (int j = 0; j < p.dim; ++j) {
      e.x(j) = centers(cls, j) + p.noise * rng.normal();
    }
    e.y = cls;
    return e;
  };

  BlobsScenario sc;
  sc.train_all.feature_dim = sc.retain.feature_dim = sc.forget.feature_dim =
      sc.retain_eval.feature_dim = p.dim;
  sc.train_all.num_classes = sc.retain.num_classes = sc.forget.num_classes =
      sc.retain_eval.num_classes = p.classes;

  for (int cls = 0; cls < p.classes; ++cls) {
    for (int i = 0; i < p.per_class; ++i) {
      Example e = draw(cls);
      sc.train_all.examples.push_back(e);
      if (cls == p.forget_class) {
        sc.forget.examples.push_back(std::move(e));
      } else {
        sc.retain.examples.push_back(std::move(e));
      }
    }
  }
  for (int cls = 0; cls < p.classes; ++cls) {
    if (cls == p.forget_class) continue;
    for (int i = 0; i < p.eval_per_class; ++i) {
      sc.retain_eval.examples.push_back(draw(cls));
    }
  }

  RunConfig cfg;
  cfg.model.task = "classify";
  if (p.hidden > 0) {
    cfg.model.layers = {
        {"fc1", p.dim, p.hidden, Nonlinearity::tanh},
        {"fc2", p.hidden, p.classes, Nonlinearity::none},
    };
  } else {
    cfg.model.layers = {{"fc1", p.dim, p.classes, Nonlinearity::none}};
  }
  cfg.train = {p.epochs, p.lr, p.batch, seed};
  cfg.unlearn.estimator = "kfac";
  cfg.unlearn.fisher_mode = "auto";
  cfg.unlearn.steps = 4;
  cfg.unlearn.step_size = 3e-2;
  cfg.unlearn.damping = 1e-14;
  cfg.unlearn.loss = "margin";
  cfg.unlearn.refit_every_step = true;
  cfg.unlearn.seed = seed;
  cfg.eval.bootstrap_n = 200;
  sc.config = cfg;
  return sc;
}

namespace {

void write_lines(const std::filesystem::path& path,
                 const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error::io("cannot open '" + path.string() + "' for writing");
  for (const std::string& line : lines) out << line << "\n";
  if (!out) throw Error::io("write failed for '" + path.string() + "'");
}

std::vector<std::string> token_lines(const std::vector<std::vector<int>>& records) {
  std::vector<std::string> lines;
  for (const auto& tokens : records) {
    lines.push_back(json{{"tokens", tokens}}.dump());
  }
  return lines;
}

std::vector<std::string> classify_lines(const Dataset& data) {
  std::vector<std::string> lines;
  for (const Example& e : data.examples) {
    std::vector<double> xs(e.x.data(), e.x.data() + e.x.size());
    lines.push_back(json{{"x", xs}, {"y", e.y}}.dump());
  }
  return lines;
}

void write_config(const std::filesystem::path& dir, RunConfig cfg) {
  cfg.paths.dataset_retain = (dir / "retain.jsonl").string();
  cfg.paths.dataset_forget = (dir / "forget.jsonl").string();
  cfg.paths.dataset_eval = (dir / "eval.jsonl").string();
  cfg.paths.checkpoints_dir = dir.string();
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw Error::io("cannot write config.json");
  out << cfg.to_json().dump(2) << "\n";
}

}  // namespace

void write_facts_scenario(const std::filesystem::path& dir,
                          const FactsScenario& sc) {
  std::filesystem::create_directories(dir);
  write_lines(dir / "retain.jsonl", token_lines(sc.records_retain));
  write_lines(dir / "forget.jsonl", token_lines(sc.records_forget));

  std::vector<std::string> eval_lines = token_lines(sc.records_retain);
  for (const TruthRatioItem& item : sc.truth_items) {
    eval_lines.push_back(json{{"id", item.id},
                              {"question", item.question},
                              {"answer", item.answer},
                              {"perturbed", item.perturbed}}
                             .dump());
  }
  write_lines(dir / "eval.jsonl", eval_lines);
  write_lines(dir / "finetune.jsonl", token_lines(sc.records_retain));
  write_config(dir, sc.config);
}

void write_blobs_scenario(const std::filesystem::path& dir,
                          const BlobsScenario& sc) {
  std::filesystem::create_directories(dir);
  write_lines(dir / "retain.jsonl", classify_lines(sc.retain));
  write_lines(dir / "forget.jsonl", classify_lines(sc.forget));
  write_lines(dir / "eval.jsonl", classify_lines(sc.retain_eval));
  write_config(dir, sc.config);
}

}  // namespace kfade
