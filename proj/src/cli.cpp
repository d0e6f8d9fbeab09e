// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <tuple>

#include "kfade/config.hpp"
#include "kfade/io.hpp"
#include "kfade/oracle.hpp"
#include "kfade/scenarios.hpp"
#include "kfade/unlearn.hpp"

namespace kfade {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::string out_dir = ".";
  bool quiet = false;
  std::chrono::steady_clock::time_point started;
};

void log_info(const GlobalOpts& g, const std::string& message) {
  if (!g.quiet) std::cerr << "[kfade] " << message << "\n";
}

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

/// Nondeterministic fields (timestamps, wall clock) live in a single "meta"
/// object so reports can be compared after dropping it.
json report_meta(const GlobalOpts& g) {
  json meta;
  meta["timestamp"] = iso_timestamp();
  meta["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - g.started)
          .count();
  meta["version"] = "0.1.0";
  return meta;
}

void write_report(const fs::path& path, json body, json meta) {
  body["meta"] = std::move(meta);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error::io("cannot open '" + path.string() + "' for writing");
  out << body.dump(2) << "\n";
  if (!out) throw Error::io("write failed for '" + path.string() + "'");
}

std::string fmt_double(double v) { return json(v).dump(); }

RunConfig load_config_checked(const GlobalOpts& g) {
  if (g.config_path.empty()) throw Error::config("--config is required");
  if (!fs::exists(g.config_path)) {
    throw Error::config("config path '" + g.config_path + "' does not exist");
  }
  RunConfig cfg = load_run_config(g.config_path);
  if (g.seed_override) {
    cfg.train.seed = *g.seed_override;
    cfg.unlearn.seed = *g.seed_override;
  }
  return cfg;
}

void require_path(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error::config(what + " is not set in the config");
  if (!fs::exists(path)) {
    throw Error::config(what + " '" + path + "' does not exist");
  }
}

fs::path prepare_out_dir(const GlobalOpts& g, const RunConfig* cfg) {
  fs::path dir = g.out_dir;
  if (g.out_dir == "." && cfg && !cfg->paths.checkpoints_dir.empty()) {
    dir = cfg->paths.checkpoints_dir;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::exists(dir)) {
    throw Error::io("cannot create output directory '" + dir.string() + "'");
  }
  return dir;
}

Dataset concat_datasets(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  if (b.feature_dim != a.feature_dim || b.num_classes != a.num_classes) {
    throw Error::config("datasets have incompatible dimensions");
  }
  out.examples.insert(out.examples.end(), b.examples.begin(), b.examples.end());
  return out;
}

LoadedCheckpoint load_checkpoint_checked(const std::string& path,
                                         const NetworkSpec& expected) {
  if (path.empty()) throw Error::config("checkpoint path is required");
  if (!fs::exists(path)) {
    throw Error::config("checkpoint '" + path + "' does not exist");
  }
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (loaded.net.layers.size() != expected.layers.size()) {
    throw Error::config("checkpoint architecture does not match config");
  }
  for (std::size_t i = 0; i < expected.layers.size(); ++i) {
    const LayerSpec& a = loaded.net.layers[i];
    const LayerSpec& b = expected.layers[i];
    if (a.name != b.name || a.d_in != b.d_in || a.d_out != b.d_out ||
        a.activation != b.activation) {
      throw Error::config("checkpoint architecture does not match config");
    }
  }
  return loaded;
}

// -- train ------------------------------------------------------------------

int cmd_train(const GlobalOpts& g, bool retain_only, const std::string& from_path,
              const std::string& dataset_override) {
  const RunConfig cfg = load_config_checked(g);
  const NetworkSpec net = cfg.model.network();

  Dataset data;
  std::uint64_t forget_fingerprint = 0;
  if (!dataset_override.empty()) {
    require_path(dataset_override, "--dataset");
    data = load_training_dataset(dataset_override, cfg.model);
  } else {
    require_path(cfg.paths.dataset_retain, "paths.dataset_retain");
    data = load_training_dataset(cfg.paths.dataset_retain, cfg.model);
    if (!retain_only) {
      require_path(cfg.paths.dataset_forget, "paths.dataset_forget");
      const Dataset forget =
          load_training_dataset(cfg.paths.dataset_forget, cfg.model);
      forget_fingerprint = forget.fingerprint();
      data = concat_datasets(data, forget);
    }
  }

  Checkpoint ckpt;
  TrainStats stats;
  const bool finetune = !from_path.empty();
  if (finetune) {
    const LoadedCheckpoint start = load_checkpoint_checked(from_path, net);
    std::tie(ckpt, stats) =
        train_sgd_from(net, start.checkpoint, data, cfg.train.train_config());
    ckpt.provenance = "finetune";
  } else {
    std::tie(ckpt, stats) = train_sgd(net, data, cfg.train.train_config());
  }

  const fs::path dir = prepare_out_dir(g, &cfg);
  const std::string stem = finetune      ? "finetuned"
                           : retain_only ? "retrained"
                                         : "checkpoint";
  const fs::path ckpt_path = dir / (stem + ".kft");
  save_checkpoint(ckpt_path, net, ckpt);

  json body;
  body["command"] = "train";
  body["retain_only"] = retain_only;
  body["finetuned_from"] = finetune ? fs::path(from_path).filename().string() : "";
  body["final_loss"] = stats.final_loss;
  body["train_accuracy"] = dataset_accuracy(net, ckpt, data);
  body["steps"] = stats.steps;
  body["seed"] = cfg.train.seed;
  body["examples"] = data.size();
  body["dataset_fingerprint"] = data.fingerprint();
  body["forget_fingerprint"] = forget_fingerprint;
  body["checkpoint"] = ckpt_path.filename().string();
  body["checkpoint_hash"] = checkpoint_hash(ckpt);
  const std::string report_name = finetune      ? "finetune_report.json"
                                  : retain_only ? "retrain_report.json"
                                                : "train_report.json";
  write_report(dir / report_name, body, report_meta(g));
  log_info(g, "trained " + std::to_string(data.size()) + " examples, final loss " +
                  fmt_double(stats.final_loss));
  return 0;
}

// -- fit-curvature ----------------------------------------------------------

int cmd_fit_curvature(const GlobalOpts& g, const std::string& checkpoint_path) {
  const RunConfig cfg = load_config_checked(g);
  const NetworkSpec net = cfg.model.network();
  const LoadedCheckpoint loaded = load_checkpoint_checked(checkpoint_path, net);
  require_path(cfg.paths.dataset_retain, "paths.dataset_retain");
  const Dataset retain = load_training_dataset(cfg.paths.dataset_retain, cfg.model);

  const UnlearnPlan plan = cfg.unlearn.plan(net);
  Rng rng(plan.seed ^ 0x51ed2701ULL);
  const CurvatureState state =
      fit_curvature(net, loaded.checkpoint, retain, plan.estimator,
                    plan.fisher_mode, plan.target_layers, rng);

  const fs::path dir = prepare_out_dir(g, &cfg);
  const fs::path factors_path = dir / "factors.kft";
  save_curvature(factors_path, net, state);

  json meta = report_meta(g);
  meta["stage_seconds"] = {{"covariance", state.timings.covariance_seconds},
                           {"eigendecomposition", state.timings.eigen_seconds},
                           {"correction", state.timings.correction_seconds}};
  json body;
  body["command"] = "fit-curvature";
  body["estimator"] = to_string(state.kind);
  body["fisher_mode"] = state.mode.exact ? "exact_enumeration" : "monte_carlo";
  body["target_layers"] = state.target_layers;
  body["retain_examples"] = retain.size();
  body["fit_fingerprint"] = state.fit_fingerprint;
  body["factors"] = factors_path.filename().string();
  write_report(dir / "fit_report.json", body, std::move(meta));
  log_info(g, "fit " + to_string(state.kind) + " factors on " +
                  std::to_string(retain.size()) + " retain examples");
  log_info(g, "stage wall clock: covariances " +
                  fmt_double(state.timings.covariance_seconds) +
                  "s, eigendecomposition " +
                  fmt_double(state.timings.eigen_seconds) + "s, correction " +
                  fmt_double(state.timings.correction_seconds) + "s");
  return 0;
}

// -- unlearn ----------------------------------------------------------------

json trace_to_json(const UnlearnTrace& trace) {
  json steps = json::array();
  for (const StepRecord& r : trace.steps) {
    steps.push_back({{"forget_loss_before", r.forget_loss_before},
                     {"forget_loss_after", r.forget_loss_after},
                     {"grad_norm", r.grad_norm},
                     {"gr_inner", r.gr_inner},
                     {"step_quadratic", r.step_quadratic},
                     {"checkpoint_hash", r.checkpoint_hash}});
  }
  return steps;
}

int cmd_unlearn(const GlobalOpts& g, const std::string& checkpoint_path,
                const std::string& factors_path, const std::string& method,
                double gamma) {
  const RunConfig cfg = load_config_checked(g);
  const NetworkSpec net = cfg.model.network();
  const LoadedCheckpoint loaded = load_checkpoint_checked(checkpoint_path, net);
  require_path(cfg.paths.dataset_forget, "paths.dataset_forget");
  const Dataset forget = load_training_dataset(cfg.paths.dataset_forget, cfg.model);
  require_path(cfg.paths.dataset_retain, "paths.dataset_retain");
  const Dataset retain = load_training_dataset(cfg.paths.dataset_retain, cfg.model);

  const UnlearnPlan plan = cfg.unlearn.plan(net);
  UnlearnResult result;
  std::optional<CurvatureState> prefit;
  if (method == "kfade") {
    if (!factors_path.empty()) {
      if (plan.refit_every_step) {
        log_info(g, "warning: --factors ignored because refit_every_step is true");
      } else {
        require_path(factors_path, "--factors");
        prefit = load_curvature(factors_path, net);
        if (prefit->fit_fingerprint != retain.fingerprint()) {
          log_info(g, "warning: factors were fitted on a different dataset");
        }
      }
    }
    result = kfade_unlearn(net, loaded.checkpoint, forget, retain, plan,
                           prefit ? &*prefit : nullptr);
  } else if (method == "grad_ascent") {
    result = grad_ascent_baseline(net, loaded.checkpoint, forget, plan.steps,
                                  plan.step_size, plan.forget_loss);
  } else if (method == "grad_diff") {
    result = grad_diff_baseline(net, loaded.checkpoint, forget, retain,
                                plan.steps, plan.step_size, gamma,
                                plan.forget_loss);
  } else {
    throw Error::config("--method must be kfade, grad_ascent, or grad_diff");
  }

  const fs::path dir = prepare_out_dir(g, &cfg);
  const fs::path out_path = dir / "unlearned.kft";
  save_checkpoint(out_path, net, result.checkpoint);

  json body;
  body["command"] = "unlearn";
  body["method"] = method;
  body["estimator"] = cfg.unlearn.estimator;
  body["steps"] = trace_to_json(result.trace);
  body["step_size"] = plan.step_size;
  body["damping"] = plan.damping;
  body["loss"] = to_string(plan.forget_loss);
  body["seed"] = plan.seed;
  body["checkpoint"] = out_path.filename().string();
  body["checkpoint_hash"] = checkpoint_hash(result.checkpoint);
  write_report(dir / "unlearn_trace.json", body, report_meta(g));
  log_info(g, method + " finished: forget loss " +
                  fmt_double(result.trace.steps.front().forget_loss_before) +
                  " -> " + fmt_double(result.trace.steps.back().forget_loss_after));
  return 0;
}

// -- eval -------------------------------------------------------------------

int cmd_eval(const GlobalOpts& g, const std::string& base_path,
             const std::string& test_path, const std::string& retrained_path) {
  const RunConfig cfg = load_config_checked(g);
  const NetworkSpec net = cfg.model.network();
  const LoadedCheckpoint base = load_checkpoint_checked(base_path, net);
  const LoadedCheckpoint test = load_checkpoint_checked(test_path, net);
  require_path(cfg.paths.dataset_eval, "paths.dataset_eval");
  const EvalData eval_data = load_eval_dataset(cfg.paths.dataset_eval, cfg.model);
  require_path(cfg.paths.dataset_forget, "paths.dataset_forget");
  const Dataset forget = load_training_dataset(cfg.paths.dataset_forget, cfg.model);

  json body;
  body["command"] = "eval";
  const std::uint64_t bootstrap_seed = cfg.train.seed ^ 0x626f6f74ULL;
  if (!eval_data.positions.empty()) {
    const KlReport kl =
        kl_specificity(net, base.checkpoint, test.checkpoint,
                       eval_data.positions, cfg.eval.bootstrap_n, bootstrap_seed);
    body["kl_mean"] = kl.mean;
    body["kl_ci_low"] = kl.ci_low;
    body["kl_ci_high"] = kl.ci_high;
    body["kl_p50"] = kl.p50;
    body["kl_p90"] = kl.p90;
    body["kl_p99"] = kl.p99;
    body["kl_values"] = kl.values;
  }
  body["forget_loss_mean"] =
      dataset_loss(net, test.checkpoint, forget, LossKind::cross_entropy);
  body["forget_accuracy"] = dataset_accuracy(net, test.checkpoint, forget);
  body["ks_mode"] = cfg.eval.ks_mode;

  if (!retrained_path.empty()) {
    const LoadedCheckpoint retrained = load_checkpoint_checked(retrained_path, net);
    if (eval_data.truth_items.empty()) {
      throw Error::config(
          "eval with --retrained needs truth-ratio records in dataset_eval");
    }
    const TruthRatioSet tr_test =
        truth_ratios(net, test.checkpoint, eval_data.truth_items,
                     cfg.model.context_window, cfg.model.vocab);
    const TruthRatioSet tr_retrained =
        truth_ratios(net, retrained.checkpoint, eval_data.truth_items,
                     cfg.model.context_window, cfg.model.vocab);
    body["truth_ratios"] = tr_test.ratios;
    body["truth_ratio_ids"] = tr_test.ids;
    body["retrained_truth_ratios"] = tr_retrained.ratios;
    const KsResult ks = ks_two_sample(tr_test.ratios, tr_retrained.ratios);
    body["ks_D"] = ks.statistic;
    body["forget_quality_p"] = forget_quality(tr_test, tr_retrained);
  }

  const fs::path dir = prepare_out_dir(g, &cfg);
  write_report(dir / "eval_report.json", body, report_meta(g));
  log_info(g, "eval written to " + (dir / "eval_report.json").string());
  return 0;
}

// -- transfer ---------------------------------------------------------------

int cmd_transfer(const GlobalOpts& g, const std::string& finetuned_path,
                 const std::string& unlearned_path, const std::string& base_path) {
  for (const auto& [path, what] :
       {std::pair{finetuned_path, "--finetuned"}, {unlearned_path, "--unlearned"},
        {base_path, "--base"}}) {
    if (path.empty()) throw Error::config(std::string(what) + " is required");
    if (!fs::exists(path)) {
      throw Error::config(std::string(what) + " '" + path + "' does not exist");
    }
  }
  const LoadedCheckpoint finetuned = load_checkpoint(finetuned_path);
  const LoadedCheckpoint unlearned = load_checkpoint(unlearned_path);
  const LoadedCheckpoint base = load_checkpoint(base_path);
  const Checkpoint merged = transfer_update(finetuned.checkpoint,
                                            unlearned.checkpoint, base.checkpoint);

  const fs::path dir = prepare_out_dir(g, nullptr);
  const fs::path out_path = dir / "transferred.kft";
  save_checkpoint(out_path, finetuned.net, merged);

  json body;
  body["command"] = "transfer";
  body["checkpoint"] = out_path.filename().string();
  body["checkpoint_hash"] = checkpoint_hash(merged);
  write_report(dir / "transfer_report.json", body, report_meta(g));
  log_info(g, "transfer written to " + out_path.string());
  return 0;
}

// -- sweep ------------------------------------------------------------------

std::vector<double> parse_double_list(const std::string& csv,
                                      const std::string& what) {
  std::vector<double> out;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t comma = csv.find(',', begin);
    const std::string token =
        csv.substr(begin, comma == std::string::npos ? csv.size() - begin
                                                     : comma - begin);
    if (!token.empty()) {
      try {
        out.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw Error::config(what + ": cannot parse '" + token + "'");
      }
    }
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t comma = csv.find(',', begin);
    const std::string token =
        csv.substr(begin, comma == std::string::npos ? csv.size() - begin
                                                     : comma - begin);
    if (!token.empty()) out.push_back(token);
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

int cmd_sweep(const GlobalOpts& g, const std::string& checkpoint_path,
              const std::string& alphas_csv, const std::string& lambdas_csv,
              const std::string& estimators_csv) {
  const RunConfig cfg = load_config_checked(g);
  const NetworkSpec net = cfg.model.network();
  const LoadedCheckpoint base = load_checkpoint_checked(checkpoint_path, net);
  require_path(cfg.paths.dataset_forget, "paths.dataset_forget");
  require_path(cfg.paths.dataset_retain, "paths.dataset_retain");
  require_path(cfg.paths.dataset_eval, "paths.dataset_eval");
  const Dataset forget = load_training_dataset(cfg.paths.dataset_forget, cfg.model);
  const Dataset retain = load_training_dataset(cfg.paths.dataset_retain, cfg.model);
  const EvalData eval_data = load_eval_dataset(cfg.paths.dataset_eval, cfg.model);
  if (eval_data.positions.empty()) {
    throw Error::config("sweep needs KL positions in dataset_eval");
  }

  std::vector<double> alphas = alphas_csv.empty()
                                   ? std::vector<double>{cfg.unlearn.step_size}
                                   : parse_double_list(alphas_csv, "--alphas");
  std::vector<double> lambdas = lambdas_csv.empty()
                                    ? std::vector<double>{cfg.unlearn.damping}
                                    : parse_double_list(lambdas_csv, "--lambdas");
  std::vector<std::string> estimators =
      estimators_csv.empty() ? std::vector<std::string>{cfg.unlearn.estimator}
                             : parse_string_list(estimators_csv);

  const UnlearnPlan base_plan = cfg.unlearn.plan(net);
  const double base_forget_loss =
      dataset_loss(net, base.checkpoint, forget, base_plan.forget_loss);
  const std::uint64_t bootstrap_seed = cfg.train.seed ^ 0x626f6f74ULL;

  json cells = json::array();
  std::vector<ParetoPoint> points;
  // With refit_every_step off, factors depend only on the estimator (the
  // base weights are fixed), so they are fitted once and reused across the
  // alpha / lambda grid.
  std::vector<std::pair<std::string, CurvatureState>> cache;

  for (const std::string& estimator : estimators) {
    for (double lambda : lambdas) {
      for (double alpha : alphas) {
        UnlearnPlan plan = base_plan;
        json cell;
        cell["estimator"] = estimator;
        cell["alpha"] = alpha;
        cell["lambda"] = lambda;
        try {
          plan.estimator = estimator_from_string(estimator);
          plan.step_size = alpha;
          plan.damping = lambda;

          const CurvatureState* prefit = nullptr;
          bool cache_hit = false;
          if (!plan.refit_every_step &&
              plan.estimator != EstimatorKind::identity) {
            for (const auto& [key, state] : cache) {
              if (key == estimator) {
                prefit = &state;
                cache_hit = true;
                break;
              }
            }
            if (!prefit) {
              Rng rng(plan.seed ^ 0x51ed2701ULL);
              cache.emplace_back(
                  estimator,
                  fit_curvature(net, base.checkpoint, retain, plan.estimator,
                                plan.fisher_mode, plan.target_layers, rng));
              prefit = &cache.back().second;
            } else {
              log_info(g, "sweep cache hit for estimator " + estimator);
            }
          }
          cell["cache_hit"] = cache_hit;

          const UnlearnResult result =
              kfade_unlearn(net, base.checkpoint, forget, retain, plan, prefit);
          const double forget_gain =
              dataset_loss(net, result.checkpoint, forget, plan.forget_loss) -
              base_forget_loss;
          const KlReport kl = kl_specificity(net, base.checkpoint,
                                             result.checkpoint,
                                             eval_data.positions,
                                             cfg.eval.bootstrap_n, bootstrap_seed);
          cell["forget_gain"] = forget_gain;
          cell["retain_kl"] = kl.mean;
          const std::string label = "estimator=" + estimator +
                                    " alpha=" + fmt_double(alpha) +
                                    " lambda=" + fmt_double(lambda);
          points.push_back({forget_gain, kl.mean, label});
        } catch (const Error& e) {
          cell["error"] = e.what();
          log_info(g, "sweep cell failed: " + std::string(e.what()));
        }
        cells.push_back(std::move(cell));
      }
    }
  }

  // Forget gain is maximized, retain KL minimized.
  const ParetoReport pareto = pareto_report(points, true, false);
  const auto points_json = [](const std::vector<ParetoPoint>& ps) {
    json arr = json::array();
    for (const ParetoPoint& p : ps) {
      arr.push_back({{"forget_gain", p.x}, {"retain_kl", p.y}, {"label", p.label}});
    }
    return arr;
  };

  json body;
  body["command"] = "sweep";
  body["cells"] = cells;
  body["points"] = points_json(pareto.points);
  body["pareto_frontier"] = points_json(pareto.frontier);

  const fs::path dir = prepare_out_dir(g, &cfg);
  write_report(dir / "sweep_report.json", body, report_meta(g));
  log_info(g, "sweep wrote " + std::to_string(pareto.points.size()) + " points, " +
                  std::to_string(pareto.frontier.size()) + " on the frontier");
  return 0;
}

// -- oracle -----------------------------------------------------------------

int cmd_oracle(const GlobalOpts& g, const std::string& checkpoint_path) {
  const RunConfig cfg = load_config_checked(g);
  const std::uint64_t seed = cfg.train.seed;

  // Ridge response on seeded synthetic data; exact by construction.
  Rng rng(seed ^ 0x04ac1eULL);
  json body;
  body["command"] = "oracle";
  {
    const int n = 200, d = 10, n_forget = 20;
    Matrix x(n, d);
    Vector w(d), y(n);
    for (int j = 0; j < d; ++j) w(j) = rng.normal();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
      y(i) = x.row(i).dot(w) + 0.1 * rng.normal();
    }
    std::vector<int> forget_idx(n_forget);
    for (int i = 0; i < n_forget; ++i) forget_idx[i] = i;
    const ResponseReport r = ridge_response_check(x, y, forget_idx, 1e-2);
    body["ridge"] = {{"d0", r.d0}, {"d1", r.d1}, {"ratio", r.ratio}};
  }
  {
    const int n = 500, d = 10, classes = 3, n_forget = 25;
    Matrix x(n, d);
    Matrix w(classes, d);
    std::vector<int> labels(n);
    for (int c = 0; c < classes; ++c) {
      for (int j = 0; j < d; ++j) w(c, j) = rng.normal();
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
      labels[i] = rng.categorical(
          {std::exp(w.row(0).dot(x.row(i))), std::exp(w.row(1).dot(x.row(i))),
           std::exp(w.row(2).dot(x.row(i)))});
    }
    std::vector<int> forget_idx(n_forget);
    for (int i = 0; i < n_forget; ++i) forget_idx[i] = i;
    const ResponseReport r = logistic_response_check(x, labels, forget_idx, 1e-2);
    body["logistic"] = {{"d0", r.d0},
                        {"d1", r.d1},
                        {"ratio", r.ratio},
                        {"grad_norm_full", r.grad_norm_full},
                        {"grad_norm_retain", r.grad_norm_retain}};
  }

  if (!checkpoint_path.empty()) {
    const NetworkSpec net = cfg.model.network();
    const LoadedCheckpoint loaded = load_checkpoint_checked(checkpoint_path, net);
    require_path(cfg.paths.dataset_retain, "paths.dataset_retain");
    const Dataset retain =
        load_training_dataset(cfg.paths.dataset_retain, cfg.model);
    const UnlearnPlan plan = cfg.unlearn.plan(net);
    if (targeted_parameter_count(net, plan.target_layers) > kDenseParameterGuard) {
      throw Error::config("oracle gauss-newton check needs <= " +
                          std::to_string(kDenseParameterGuard) +
                          " targeted parameters");
    }
    Rng fit_rng(seed ^ 0x51ed2701ULL);
    const CurvatureState state =
        fit_factors(net, loaded.checkpoint, retain, EstimatorKind::exact_dense,
                    FisherMode::enumeration(), plan.target_layers, fit_rng);
    const std::vector<Matrix> covariance_form = dense_reconstruct(state, net);
    const std::vector<Matrix> jacobian_form =
        exact_gauss_newton(net, loaded.checkpoint, retain, plan.target_layers);
    double max_rel = 0.0;
    for (std::size_t t = 0; t < covariance_form.size(); ++t) {
      const double denom = std::max(jacobian_form[t].norm(), 1e-300);
      max_rel = std::max(
          max_rel, (covariance_form[t] - jacobian_form[t]).norm() / denom);
    }
    body["gauss_newton_max_rel_err"] = max_rel;
  }

  const fs::path dir = prepare_out_dir(g, &cfg);
  write_report(dir / "oracle_report.json", body, report_meta(g));
  log_info(g, "oracle checks written to " + (dir / "oracle_report.json").string());
  return 0;
}

// -- gen --------------------------------------------------------------------

int cmd_gen(const GlobalOpts& g, const std::string& scenario) {
  const std::uint64_t seed = g.seed_override.value_or(0);
  const fs::path dir = prepare_out_dir(g, nullptr);
  if (scenario == "facts" || scenario == "lifecycle") {
    write_facts_scenario(dir, make_facts_scenario(seed));
  } else if (scenario == "blobs") {
    write_blobs_scenario(dir, make_blobs_scenario(seed));
  } else {
    throw Error::config("--scenario must be facts, blobs, or lifecycle");
  }
  log_info(g, "scenario '" + scenario + "' written to " + dir.string());
  return 0;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::numeric: return 3;
    case ErrorKind::io: return 4;
  }
  return 1;
}

void print_error(ErrorKind kind, const std::string& message) {
  const char* name = kind == ErrorKind::config   ? "config"
                     : kind == ErrorKind::numeric ? "numeric"
                                                  : "io";
  std::cerr << json{{"error", {{"kind", name}, {"message", message}}}}.dump()
            << "\n";
}

void apply_thread_cap() {
  const char* env = std::getenv("KFADE_THREADS");
  if (!env) return;
  try {
    const int cap = std::stoi(env);
    if (cap >= 1) Eigen::setNbThreads(cap);
  } catch (const std::exception&) {
    std::cerr << "[kfade] warning: ignoring invalid KFADE_THREADS value\n";
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  GlobalOpts g;
  g.started = std::chrono::steady_clock::now();
  apply_thread_cap();

  CLI::App app{"Kronecker-factored Gauss-Newton unlearning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value,
                                  "Override the config seeds");
  app.add_option("--config", g.config_path, "Path to the run config JSON");
  app.add_option("--out", g.out_dir, "Output directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress logging");

  auto* train = app.add_subcommand("train", "Train a model per the config");
  bool retain_only = false;
  std::string train_from, train_dataset;
  train->add_flag("--retain-only", retain_only,
                  "Train on the retain set only (retraining oracle)");
  train->add_option("--from", train_from,
                    "Continue from an existing checkpoint (fine-tuning)");
  train->add_option("--dataset", train_dataset,
                    "Train on this JSONL file instead of the config paths");

  auto* fit = app.add_subcommand("fit-curvature",
                                 "Fit the configured curvature estimator");
  std::string fit_checkpoint;
  fit->add_option("--checkpoint", fit_checkpoint, "Model checkpoint")->required();

  auto* unlearn = app.add_subcommand("unlearn", "Run the unlearning loop");
  std::string unlearn_checkpoint, unlearn_factors, unlearn_method = "kfade";
  double gamma = 1.0;
  unlearn->add_option("--checkpoint", unlearn_checkpoint, "Model checkpoint")
      ->required();
  unlearn->add_option("--factors", unlearn_factors, "Prefit curvature factors");
  unlearn->add_option("--method", unlearn_method,
                      "kfade | grad_ascent | grad_diff");
  unlearn->add_option("--gamma", gamma, "Retain weight for grad_diff");

  auto* eval = app.add_subcommand("eval", "Evaluate specificity and forgetting");
  std::string eval_base, eval_test, eval_retrained;
  eval->add_option("--base", eval_base, "Base checkpoint")->required();
  eval->add_option("--test", eval_test, "Checkpoint under evaluation")->required();
  eval->add_option("--retrained", eval_retrained, "Retraining-oracle checkpoint");

  auto* transfer = app.add_subcommand("transfer",
                                      "Re-apply an unlearning weight delta");
  std::string tr_finetuned, tr_unlearned, tr_base;
  transfer->add_option("--finetuned", tr_finetuned, "Fine-tuned checkpoint")
      ->required();
  transfer->add_option("--unlearned", tr_unlearned, "Unlearned checkpoint")
      ->required();
  transfer->add_option("--base", tr_base, "Base checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "Grid over alpha/lambda/estimator");
  std::string sweep_checkpoint, alphas_csv, lambdas_csv, estimators_csv;
  sweep->add_option("--checkpoint", sweep_checkpoint, "Model checkpoint")
      ->required();
  sweep->add_option("--alphas", alphas_csv, "Comma-separated step sizes");
  sweep->add_option("--lambdas", lambdas_csv, "Comma-separated dampings");
  sweep->add_option("--estimators", estimators_csv, "Comma-separated estimators");

  auto* oracle = app.add_subcommand("oracle", "Ground-truth reference checks");
  std::string oracle_checkpoint;
  oracle->add_option("--checkpoint", oracle_checkpoint,
                     "Checkpoint for the Gauss-Newton agreement check");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic scenario");
  std::string scenario;
  gen->add_option("--scenario", scenario, "facts | blobs | lifecycle")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(ErrorKind::config, e.what());
    return 2;
  }
  if (*seed_opt) g.seed_override = seed_value;

  try {
    if (*train) return cmd_train(g, retain_only, train_from, train_dataset);
    if (*fit) return cmd_fit_curvature(g, fit_checkpoint);
    if (*unlearn) {
      return cmd_unlearn(g, unlearn_checkpoint, unlearn_factors, unlearn_method,
                         gamma);
    }
    if (*eval) return cmd_eval(g, eval_base, eval_test, eval_retrained);
    if (*transfer) return cmd_transfer(g, tr_finetuned, tr_unlearned, tr_base);
    if (*sweep) {
      return cmd_sweep(g, sweep_checkpoint, alphas_csv, lambdas_csv,
                       estimators_csv);
    }
    if (*oracle) return cmd_oracle(g, oracle_checkpoint);
    if (*gen) return cmd_gen(g, scenario);
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    print_error(ErrorKind::numeric, std::string("unexpected: ") + e.what());
    return 3;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("kfade");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace kfade
