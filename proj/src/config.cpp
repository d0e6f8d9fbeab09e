// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/config.hpp"

#include <fstream>
#include <set>

namespace kfade {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::string& where,
                         const std::set<std::string>& known) {
  for (const auto& item : obj.items()) {
    if (!known.count(item.key())) {
      throw Error::config("unknown key '" + where + item.key() + "'");
    }
  }
}

template <typename T>
T require(const json& obj, const std::string& where, const std::string& key) {
  if (!obj.contains(key)) {
    throw Error::config("missing key '" + where + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error::config("key '" + where + key + "' has the wrong type");
  }
}

template <typename T>
T optional(const json& obj, const std::string& where, const std::string& key,
           T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error::config("key '" + where + key + "' has the wrong type");
  }
}

}  // namespace

NetworkSpec ModelConfig::network() const {
  NetworkSpec net;
  net.layers = layers;
  net.validate();
  if (task == "lm") {
    if (net.input_dim() != context_window * vocab) {
      throw Error::config(
          "model.layers: first layer d_in must equal context_window * vocab");
    }
    if (net.output_dim() != vocab) {
      throw Error::config("model.layers: last layer d_out must equal vocab");
    }
  }
  return net;
}

UnlearnPlan UnlearnBlock::plan(const NetworkSpec& net) const {
  UnlearnPlan plan;
  plan.steps = steps;
  plan.step_size = step_size;
  plan.damping = damping;
  plan.forget_loss = loss_kind_from_string(loss);
  plan.estimator = estimator_from_string(estimator);
  if (fisher_mode == "auto") {
    plan.fisher_mode = FisherMode::auto_select(net.output_dim());
  } else if (fisher_mode == "exact_enumeration") {
    plan.fisher_mode = FisherMode::enumeration();
  } else if (fisher_mode == "monte_carlo") {
    if (mc_samples <= 0) {
      throw Error::config("unlearn.mc_samples must be positive");
    }
    plan.fisher_mode = FisherMode::monte_carlo(mc_samples);
  } else {
    throw Error::config("unlearn.fisher_mode must be auto, exact_enumeration, "
                        "or monte_carlo");
  }
  if (target_layers.empty()) {
    for (const LayerSpec& l : net.layers) plan.target_layers.push_back(l.name);
  } else {
    plan.target_layers = target_layers;
  }
  plan.refit_every_step = refit_every_step;
  plan.seed = seed;
  return plan;
}

json RunConfig::to_json() const {
  json layers = json::array();
  for (const LayerSpec& l : model.layers) {
    layers.push_back({{"name", l.name},
                      {"d_in", l.d_in},
                      {"d_out", l.d_out},
                      {"nonlinearity", to_string(l.activation)}});
  }
  json doc;
  doc["model"] = {{"layers", layers}, {"task", model.task}};
  if (model.task == "lm") {
    doc["model"]["context_window"] = model.context_window;
    doc["model"]["vocab"] = model.vocab;
  }
  doc["train"] = {{"epochs", train.epochs},
                  {"lr", train.lr},
                  {"batch", train.batch},
                  {"seed", train.seed}};
  doc["unlearn"] = {{"estimator", unlearn.estimator},
                    {"fisher_mode", unlearn.fisher_mode},
                    {"mc_samples", unlearn.mc_samples},
                    {"steps", unlearn.steps},
                    {"step_size", unlearn.step_size},
                    {"damping", unlearn.damping},
                    {"loss", unlearn.loss},
                    {"target_layers", unlearn.target_layers},
                    {"refit_every_step", unlearn.refit_every_step},
                    {"seed", unlearn.seed}};
  doc["eval"] = {{"bootstrap_n", eval.bootstrap_n}, {"ks_mode", eval.ks_mode}};
  doc["paths"] = {{"dataset_retain", paths.dataset_retain},
                  {"dataset_forget", paths.dataset_forget},
                  {"dataset_eval", paths.dataset_eval},
                  {"checkpoints_dir", paths.checkpoints_dir}};
  return doc;
}

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw Error::config("config root must be an object");
  reject_unknown_keys(doc, "", {"model", "train", "unlearn", "eval", "paths"});
  RunConfig cfg;

  const json& model = doc.contains("model") ? doc.at("model") : json::object();
  reject_unknown_keys(model, "model.",
                      {"layers", "task", "context_window", "vocab"});
  cfg.model.task = require<std::string>(model, "model.", "task");
  if (cfg.model.task != "classify" && cfg.model.task != "lm") {
    throw Error::config("model.task must be 'classify' or 'lm'");
  }
  if (!model.contains("layers") || !model.at("layers").is_array()) {
    throw Error::config("model.layers must be an array");
  }
  for (const json& l : model.at("layers")) {
    reject_unknown_keys(l, "model.layers.",
                        {"name", "d_in", "d_out", "nonlinearity"});
    cfg.model.layers.push_back(
        {require<std::string>(l, "model.layers.", "name"),
         require<int>(l, "model.layers.", "d_in"),
         require<int>(l, "model.layers.", "d_out"),
         nonlinearity_from_string(
             require<std::string>(l, "model.layers.", "nonlinearity"))});
  }
  if (cfg.model.task == "lm") {
    cfg.model.context_window = require<int>(model, "model.", "context_window");
    cfg.model.vocab = require<int>(model, "model.", "vocab");
    if (cfg.model.context_window <= 0 || cfg.model.vocab <= 0) {
      throw Error::config("model.context_window and model.vocab must be positive");
    }
  } else {
    cfg.model.context_window = optional<int>(model, "model.", "context_window", 0);
    cfg.model.vocab = optional<int>(model, "model.", "vocab", 0);
  }
  cfg.model.network();  // validates layer chaining

  const json& train = doc.contains("train") ? doc.at("train") : json::object();
  reject_unknown_keys(train, "train.", {"epochs", "lr", "batch", "seed"});
  cfg.train.epochs = optional<int>(train, "train.", "epochs", 1);
  cfg.train.lr = optional<double>(train, "train.", "lr", 0.1);
  cfg.train.batch = optional<int>(train, "train.", "batch", 32);
  cfg.train.seed = optional<std::uint64_t>(train, "train.", "seed", 0);
  if (cfg.train.epochs < 0 || cfg.train.batch <= 0) {
    throw Error::config("train.epochs must be >= 0 and train.batch positive");
  }

  const json& unlearn = doc.contains("unlearn") ? doc.at("unlearn") : json::object();
  reject_unknown_keys(unlearn, "unlearn.",
                      {"estimator", "fisher_mode", "mc_samples", "steps",
                       "step_size", "damping", "loss", "target_layers",
                       "refit_every_step", "seed"});
  cfg.unlearn.estimator =
      optional<std::string>(unlearn, "unlearn.", "estimator", "kfac");
  estimator_from_string(cfg.unlearn.estimator);
  cfg.unlearn.fisher_mode =
      optional<std::string>(unlearn, "unlearn.", "fisher_mode", "auto");
  cfg.unlearn.mc_samples = optional<int>(unlearn, "unlearn.", "mc_samples", 1);
  cfg.unlearn.steps = optional<int>(unlearn, "unlearn.", "steps", 1);
  cfg.unlearn.step_size = optional<double>(unlearn, "unlearn.", "step_size", 1e-2);
  cfg.unlearn.damping = optional<double>(unlearn, "unlearn.", "damping", 1e-8);
  cfg.unlearn.loss =
      optional<std::string>(unlearn, "unlearn.", "loss", "cross_entropy");
  loss_kind_from_string(cfg.unlearn.loss);
  cfg.unlearn.target_layers = optional<std::vector<std::string>>(
      unlearn, "unlearn.", "target_layers", {});
  cfg.unlearn.refit_every_step =
      optional<bool>(unlearn, "unlearn.", "refit_every_step", true);
  cfg.unlearn.seed = optional<std::uint64_t>(unlearn, "unlearn.", "seed", 0);
  if (cfg.unlearn.loss == "margin" && cfg.model.network().output_dim() < 2) {
    throw Error::config("unlearn.loss: margin requires at least 2 classes");
  }

  const json& eval = doc.contains("eval") ? doc.at("eval") : json::object();
  reject_unknown_keys(eval, "eval.", {"bootstrap_n", "ks_mode"});
  cfg.eval.bootstrap_n = optional<int>(eval, "eval.", "bootstrap_n", 1000);
  cfg.eval.ks_mode = optional<std::string>(eval, "eval.", "ks_mode", "asymptotic");
  if (cfg.eval.bootstrap_n <= 0) {
    throw Error::config("eval.bootstrap_n must be positive");
  }
  if (cfg.eval.ks_mode != "asymptotic") {
    throw Error::config("eval.ks_mode: only 'asymptotic' is supported");
  }

  const json& paths = doc.contains("paths") ? doc.at("paths") : json::object();
  reject_unknown_keys(paths, "paths.",
                      {"dataset_retain", "dataset_forget", "dataset_eval",
                       "checkpoints_dir"});
  cfg.paths.dataset_retain =
      optional<std::string>(paths, "paths.", "dataset_retain", "");
  cfg.paths.dataset_forget =
      optional<std::string>(paths, "paths.", "dataset_forget", "");
  cfg.paths.dataset_eval =
      optional<std::string>(paths, "paths.", "dataset_eval", "");
  cfg.paths.checkpoints_dir =
      optional<std::string>(paths, "paths.", "checkpoints_dir", "");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error::io("cannot open config '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error::config("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(doc);
}

namespace {

json parse_jsonl_line(const std::string& line, const std::filesystem::path& path,
                      std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw Error::io("bad JSON at " + path.string() + ":" +
                    std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

Dataset load_training_dataset(const std::filesystem::path& path,
                              const ModelConfig& model) {
  std::ifstream in(path);
  if (!in) throw Error::io("cannot open dataset '" + path.string() + "'");
  const NetworkSpec net = model.network();

  Dataset data;
  std::vector<std::vector<int>> token_records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = parse_jsonl_line(line, path, line_no);
    if (model.task == "classify") {
      if (!rec.contains("x") || !rec.contains("y")) {
        throw Error::config("classification record needs 'x' and 'y' (" +
                            path.string() + ":" + std::to_string(line_no) + ")");
      }
      const auto xs = rec.at("x").get<std::vector<double>>();
      Example e;
      e.x = Eigen::Map<const Vector>(xs.data(), xs.size());
      e.y = rec.at("y").get<int>();
      data.examples.push_back(std::move(e));
    } else {
      if (!rec.contains("tokens")) {
        throw Error::config("token record needs 'tokens' (" + path.string() +
                            ":" + std::to_string(line_no) + ")");
      }
      token_records.push_back(rec.at("tokens").get<std::vector<int>>());
    }
  }

  if (model.task == "lm") {
    return expand_token_records(token_records, model.context_window, model.vocab);
  }
  data.feature_dim = net.input_dim();
  data.num_classes = net.output_dim();
  data.validate();
  return data;
}

EvalData load_eval_dataset(const std::filesystem::path& path,
                           const ModelConfig& model) {
  std::ifstream in(path);
  if (!in) throw Error::io("cannot open dataset '" + path.string() + "'");
  const NetworkSpec net = model.network();

  EvalData out;
  std::vector<std::vector<int>> token_records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = parse_jsonl_line(line, path, line_no);
    if (rec.contains("question")) {
      if (model.task != "lm") {
        throw Error::config("truth-ratio records require an lm task (" +
                            path.string() + ":" + std::to_string(line_no) + ")");
      }
      TruthRatioItem item;
      item.id = rec.contains("id") ? rec.at("id").get<std::string>()
                                   : "q" + std::to_string(line_no);
      item.question = rec.at("question").get<std::vector<int>>();
      item.answer = rec.at("answer").get<std::vector<int>>();
      item.perturbed = rec.at("perturbed").get<std::vector<std::vector<int>>>();
      out.truth_items.push_back(std::move(item));
    } else if (rec.contains("tokens")) {
      token_records.push_back(rec.at("tokens").get<std::vector<int>>());
    } else if (rec.contains("x")) {
      const auto xs = rec.at("x").get<std::vector<double>>();
      Example e;
      e.x = Eigen::Map<const Vector>(xs.data(), xs.size());
      e.y = rec.at("y").get<int>();
      out.positions.examples.push_back(std::move(e));
    } else {
      throw Error::config("unrecognized eval record (" + path.string() + ":" +
                          std::to_string(line_no) + ")");
    }
  }

  if (model.task == "lm") {
    out.positions =
        expand_token_records(token_records, model.context_window, model.vocab);
  } else {
    out.positions.feature_dim = net.input_dim();
    out.positions.num_classes = net.output_dim();
    if (!out.positions.empty()) out.positions.validate();
  }
  return out;
}

}  // namespace kfade
