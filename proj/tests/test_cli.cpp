// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "kfade/cli.hpp"
#include "kfade/io.hpp"

using namespace kfade;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir() {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("kfade_cli_test_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  json doc;
  in >> doc;
  return doc;
}

json read_json_without_meta(const fs::path& path) {
  json doc = read_json(path);
  doc.erase("meta");
  return doc;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Generates the blobs scenario and trains a base checkpoint once; the CLI
/// tests below all reuse it.
struct CliFixture {
  fs::path dir;
  fs::path config;
  fs::path checkpoint;

  CliFixture() {
    dir = scratch_dir();
    REQUIRE(run_cli({"gen", "--scenario", "blobs", "--out", dir.string(),
                     "--seed", "7", "--quiet"}) == 0);
    config = dir / "config.json";
    REQUIRE(run_cli({"train", "--config", config.string(), "--out", dir.string(),
                     "--quiet"}) == 0);
    checkpoint = dir / "checkpoint.kft";
    REQUIRE(fs::exists(checkpoint));
  }
  ~CliFixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("gen + train produce a checkpoint and a deterministic report") {
  CliFixture fx;
  const json report = read_json(fx.dir / "train_report.json");
  CHECK(report.at("final_loss").get<double>() < 0.5);
  CHECK(report.at("train_accuracy").get<double>() > 0.8);
  CHECK(report.contains("meta"));

  // Re-running with the same config reproduces the checkpoint bytes and the
  // report minus its meta block.
  const std::vector<std::uint8_t> first = slurp(fx.checkpoint);
  const json body1 = read_json_without_meta(fx.dir / "train_report.json");
  REQUIRE(run_cli({"train", "--config", fx.config.string(), "--out",
                   fx.dir.string(), "--quiet"}) == 0);
  CHECK(slurp(fx.checkpoint) == first);
  CHECK(read_json_without_meta(fx.dir / "train_report.json") == body1);
}

TEST_CASE("malformed config exits with code 2 and names the offending key") {
  const fs::path dir = scratch_dir();
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"model":{"task":"classify","layers":[{"name":"fc1","d_in":2,)"
        << R"("d_out":2,"nonlinearity":"none"}]},"unlearn":{"stepsize":1}})";
  }
  CHECK(run_cli({"train", "--config", (dir / "bad.json").string(), "--quiet"}) ==
        2);

  // Through the real binary, stderr carries a machine-readable error JSON.
  const std::string cmd = std::string(KFADE_CLI_PATH) + " train --config " +
                          (dir / "bad.json").string() + " --quiet 2> " +
                          (dir / "err.json").string();
  const int rc = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(rc) == 2);
  const json err = read_json(dir / "err.json");
  CHECK(err.at("error").at("kind") == "config");
  CHECK(err.at("error").at("message").get<std::string>().find("unlearn.stepsize") !=
        std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("fit-curvature writes factors and stage timings") {
  CliFixture fx;
  REQUIRE(run_cli({"fit-curvature", "--config", fx.config.string(),
                   "--checkpoint", fx.checkpoint.string(), "--out",
                   fx.dir.string(), "--quiet"}) == 0);
  CHECK(fs::exists(fx.dir / "factors.kft"));
  const json report = read_json(fx.dir / "fit_report.json");
  CHECK(report.at("estimator") == "kfac");
  CHECK(report.at("meta").contains("stage_seconds"));
  CHECK(report.at("meta").at("stage_seconds").contains("covariance"));
}

TEST_CASE("identity estimator writes a metadata-only factor file") {
  CliFixture fx;
  json cfg = read_json(fx.config);
  cfg["unlearn"]["estimator"] = "identity";
  const fs::path patched = fx.dir / "identity.json";
  {
    std::ofstream out(patched);
    out << cfg.dump(2);
  }
  REQUIRE(run_cli({"fit-curvature", "--config", patched.string(),
                   "--checkpoint", fx.checkpoint.string(), "--out",
                   fx.dir.string(), "--quiet"}) == 0);
  const std::vector<TensorEntry> entries = read_container(fx.dir / "factors.kft");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].name == "__meta__");
}

TEST_CASE("prefit factors are ignored with a warning when refitting per step") {
  CliFixture fx;
  REQUIRE(run_cli({"fit-curvature", "--config", fx.config.string(),
                   "--checkpoint", fx.checkpoint.string(), "--out",
                   fx.dir.string(), "--quiet"}) == 0);
  // refit_every_step is true in the generated config, so the unlearn run
  // must match one without --factors.
  REQUIRE(run_cli({"unlearn", "--config", fx.config.string(), "--checkpoint",
                   fx.checkpoint.string(), "--factors",
                   (fx.dir / "factors.kft").string(), "--out", fx.dir.string(),
                   "--quiet"}) == 0);
  const LoadedCheckpoint with_factors = load_checkpoint(fx.dir / "unlearned.kft");
  REQUIRE(run_cli({"unlearn", "--config", fx.config.string(), "--checkpoint",
                   fx.checkpoint.string(), "--out", fx.dir.string(),
                   "--quiet"}) == 0);
  const LoadedCheckpoint without = load_checkpoint(fx.dir / "unlearned.kft");
  CHECK(checkpoint_hash(with_factors.checkpoint) ==
        checkpoint_hash(without.checkpoint));
}

TEST_CASE("unlearn trace has one record per step and is seed stable") {
  CliFixture fx;
  REQUIRE(run_cli({"unlearn", "--config", fx.config.string(), "--checkpoint",
                   fx.checkpoint.string(), "--out", fx.dir.string(),
                   "--quiet"}) == 0);
  const json trace = read_json(fx.dir / "unlearn_trace.json");
  CHECK(trace.at("steps").size() == 4);  // config steps = 4
  const std::vector<std::uint8_t> first = slurp(fx.dir / "unlearned.kft");
  const json body1 = read_json_without_meta(fx.dir / "unlearn_trace.json");

  REQUIRE(run_cli({"unlearn", "--config", fx.config.string(), "--checkpoint",
                   fx.checkpoint.string(), "--out", fx.dir.string(),
                   "--quiet"}) == 0);
  CHECK(slurp(fx.dir / "unlearned.kft") == first);
  CHECK(read_json_without_meta(fx.dir / "unlearn_trace.json") == body1);
}

TEST_CASE("unlearn with zero step size returns the input checkpoint") {
  CliFixture fx;
  // Patch the config's step size to zero.
  json cfg = read_json(fx.config);
  cfg["unlearn"]["step_size"] = 0.0;
  const fs::path patched = fx.dir / "zero.json";
  {
    std::ofstream out(patched);
    out << cfg.dump(2);
  }
  REQUIRE(run_cli({"unlearn", "--config", patched.string(), "--checkpoint",
                   fx.checkpoint.string(), "--out", fx.dir.string(),
                   "--quiet"}) == 0);
  const LoadedCheckpoint base = load_checkpoint(fx.checkpoint);
  const LoadedCheckpoint unlearned = load_checkpoint(fx.dir / "unlearned.kft");
  CHECK(checkpoint_hash(base.checkpoint) == checkpoint_hash(unlearned.checkpoint));
}

TEST_CASE("baseline methods run through the unlearn command") {
  CliFixture fx;
  for (const std::string method : {"grad_ascent", "grad_diff"}) {
    REQUIRE(run_cli({"unlearn", "--config", fx.config.string(), "--checkpoint",
                     fx.checkpoint.string(), "--method", method, "--gamma",
                     "0.5", "--out", fx.dir.string(), "--quiet"}) == 0);
    const json trace = read_json(fx.dir / "unlearn_trace.json");
    CHECK(trace.at("method") == method);
  }
  CHECK(run_cli({"unlearn", "--config", fx.config.string(), "--checkpoint",
                 fx.checkpoint.string(), "--method", "nope", "--out",
                 fx.dir.string(), "--quiet"}) == 2);
}

TEST_CASE("eval of the base model against itself reports zero KL") {
  CliFixture fx;
  REQUIRE(run_cli({"eval", "--config", fx.config.string(), "--base",
                   fx.checkpoint.string(), "--test", fx.checkpoint.string(),
                   "--out", fx.dir.string(), "--quiet"}) == 0);
  const json report = read_json(fx.dir / "eval_report.json");
  CHECK(report.at("kl_mean").get<double>() == 0.0);
  CHECK(!report.contains("forget_quality_p"));
  CHECK(report.contains("forget_loss_mean"));
  CHECK(report.contains("forget_accuracy"));
}

TEST_CASE("transfer command reproduces the trivial identities") {
  CliFixture fx;
  // finetuned = base + bump on fc1
  const LoadedCheckpoint base = load_checkpoint(fx.checkpoint);
  Checkpoint bumped = base.checkpoint;
  bumped.weights[0].array() += 0.125;
  const fs::path finetuned = fx.dir / "finetuned.kft";
  save_checkpoint(finetuned, base.net, bumped);

  REQUIRE(run_cli({"transfer", "--finetuned", finetuned.string(), "--unlearned",
                   fx.checkpoint.string(), "--base", fx.checkpoint.string(),
                   "--out", fx.dir.string(), "--quiet"}) == 0);
  const LoadedCheckpoint merged = load_checkpoint(fx.dir / "transferred.kft");
  CHECK(checkpoint_hash(merged.checkpoint) == checkpoint_hash(bumped));
}

TEST_CASE("sweep emits a frontier and reuses cached factors") {
  CliFixture fx;
  // Single cell: the frontier is that point.
  REQUIRE(run_cli({"sweep", "--config", fx.config.string(), "--checkpoint",
                   fx.checkpoint.string(), "--alphas", "0.01", "--out",
                   fx.dir.string(), "--quiet"}) == 0);
  json report = read_json(fx.dir / "sweep_report.json");
  CHECK(report.at("points").size() == 1);
  CHECK(report.at("pareto_frontier").size() == 1);

  // Two alphas with refit disabled: the second cell hits the factor cache.
  json cfg = read_json(fx.config);
  cfg["unlearn"]["refit_every_step"] = false;
  const fs::path patched = fx.dir / "norefit.json";
  {
    std::ofstream out(patched);
    out << cfg.dump(2);
  }
  REQUIRE(run_cli({"sweep", "--config", patched.string(), "--checkpoint",
                   fx.checkpoint.string(), "--alphas", "0.005,0.02", "--out",
                   fx.dir.string(), "--quiet"}) == 0);
  report = read_json(fx.dir / "sweep_report.json");
  REQUIRE(report.at("cells").size() == 2);
  CHECK(report.at("cells").at(0).at("cache_hit") == false);
  CHECK(report.at("cells").at(1).at("cache_hit") == true);
}

TEST_CASE("oracle command reports the response-function checks") {
  CliFixture fx;
  REQUIRE(run_cli({"oracle", "--config", fx.config.string(), "--checkpoint",
                   fx.checkpoint.string(), "--out", fx.dir.string(),
                   "--quiet"}) == 0);
  const json report = read_json(fx.dir / "oracle_report.json");
  CHECK(report.at("ridge").at("d1").get<double>() <= 1e-8);
  CHECK(report.at("logistic").at("ratio").get<double>() <= 0.5);
  CHECK(report.at("gauss_newton_max_rel_err").get<double>() <= 1e-10);
}

TEST_CASE("train honors the retain-only flag for the retraining oracle") {
  CliFixture fx;
  REQUIRE(run_cli({"train", "--config", fx.config.string(), "--retain-only",
                   "--out", fx.dir.string(), "--quiet"}) == 0);
  CHECK(fs::exists(fx.dir / "retrained.kft"));
  const json report = read_json(fx.dir / "retrain_report.json");
  CHECK(report.at("retain_only") == true);
  CHECK(report.at("examples").get<int>() == 300);
}

TEST_CASE("sweep on the facts task: kfac frontier dominates diagonal") {
  const fs::path dir = scratch_dir();
  REQUIRE(run_cli({"gen", "--scenario", "facts", "--out", dir.string(),
                   "--seed", "3", "--quiet"}) == 0);
  // Restrict updates to the dense second projection and reuse factors
  // across the step-size grid.
  json cfg = read_json(dir / "config.json");
  cfg["unlearn"]["target_layers"] = {"fc2"};
  cfg["unlearn"]["refit_every_step"] = false;
  cfg["unlearn"]["steps"] = 1;
  const fs::path patched = dir / "sweep.json";
  {
    std::ofstream out(patched);
    out << cfg.dump(2);
  }
  REQUIRE(run_cli({"train", "--config", patched.string(), "--out", dir.string(),
                   "--quiet"}) == 0);
  REQUIRE(run_cli({"sweep", "--config", patched.string(), "--checkpoint",
                   (dir / "checkpoint.kft").string(), "--alphas",
                   "0.01,0.1,1,10,100,1000", "--estimators", "kfac,diagonal",
                   "--out", dir.string(), "--quiet"}) == 0);
  const json report = read_json(dir / "sweep_report.json");

  // At comparable forget-loss gains (>= 2 nats) the kfac cells sit at far
  // lower retain KL than the diagonal cells.
  double best_kfac = 1e300, best_diag = 1e300;
  for (const json& cell : report.at("cells")) {
    if (cell.contains("error")) continue;
    if (cell.at("forget_gain").get<double>() < 2.0) continue;
    const double kl = cell.at("retain_kl").get<double>();
    if (cell.at("estimator") == "kfac") best_kfac = std::min(best_kfac, kl);
    if (cell.at("estimator") == "diagonal") best_diag = std::min(best_diag, kl);
  }
  REQUIRE(best_kfac < 1e300);
  REQUIRE(best_diag < 1e300);
  CHECK(best_kfac < best_diag);
  fs::remove_all(dir);
}

TEST_CASE("lifecycle: finetune the unlearned model and re-apply the delta") {
  const fs::path dir = scratch_dir();
  REQUIRE(run_cli({"gen", "--scenario", "lifecycle", "--out", dir.string(),
                   "--seed", "11", "--quiet"}) == 0);
  const std::string cfg = (dir / "config.json").string();
  REQUIRE(run_cli({"train", "--config", cfg, "--out", dir.string(), "--quiet"}) ==
          0);
  REQUIRE(run_cli({"unlearn", "--config", cfg, "--checkpoint",
                   (dir / "checkpoint.kft").string(), "--out", dir.string(),
                   "--quiet"}) == 0);
  REQUIRE(run_cli({"train", "--config", cfg, "--from",
                   (dir / "unlearned.kft").string(), "--dataset",
                   (dir / "finetune.jsonl").string(), "--out", dir.string(),
                   "--quiet"}) == 0);
  REQUIRE(fs::exists(dir / "finetuned.kft"));
  REQUIRE(run_cli({"transfer", "--finetuned", (dir / "finetuned.kft").string(),
                   "--unlearned", (dir / "unlearned.kft").string(), "--base",
                   (dir / "checkpoint.kft").string(), "--out", dir.string(),
                   "--quiet"}) == 0);
  CHECK(fs::exists(dir / "transferred.kft"));
  const json report = read_json(dir / "finetune_report.json");
  CHECK(report.at("finetuned_from") == "unlearned.kft");
  fs::remove_all(dir);
}

TEST_CASE("missing dataset paths are config errors") {
  const fs::path dir = scratch_dir();
  {
    std::ofstream out(dir / "cfg.json");
    out << R"({"model":{"task":"classify","layers":[{"name":"fc1","d_in":2,)"
        << R"("d_out":2,"nonlinearity":"none"}]},)"
        << R"("paths":{"dataset_retain":"/nonexistent.jsonl"}})";
  }
  CHECK(run_cli({"train", "--config", (dir / "cfg.json").string(), "--quiet"}) ==
        2);
  fs::remove_all(dir);
}
