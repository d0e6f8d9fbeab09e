// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kfade/model.hpp"

namespace kfade {

struct KlReport {
  std::vector<double> values;  // one per evaluated example
  double mean = 0.0;
  double p50 = 0.0, p90 = 0.0, p99 = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // bootstrap 95% CI of the mean
};

/// KL(p || q) for categorical distributions given as log-probabilities.
double categorical_kl(const Vector& log_p, const Vector& log_q);

/// Linear-interpolation quantile of a sample (q in [0, 1]).
double quantile(std::vector<double> values, double q);

struct BootstrapCi {
  double low = 0.0, high = 0.0;
};
BootstrapCi bootstrap_mean_ci(const std::vector<double>& values, int resamples,
                              std::uint64_t seed);

/// Per-example KL from the base model's output distribution to the test
/// model's, averaged over the example's prediction positions (our datasets
/// carry one position per example). Tiny negative values from roundoff are
/// clamped to zero.
KlReport kl_specificity(const NetworkSpec& net, const Checkpoint& base,
                        const Checkpoint& test, const Dataset& eval_set,
                        int bootstrap_n, std::uint64_t seed);

/// A question with its correct answer and syntactically-close wrong answers,
/// all as token id sequences.
struct TruthRatioItem {
  std::string id;
  std::vector<int> question;
  std::vector<int> answer;
  std::vector<std::vector<int>> perturbed;
};

/// Mean length-normalized probability of the perturbed answers over the
/// length-normalized probability of the correct answer. Length
/// normalization is the geometric mean of per-token probabilities; per-token
/// log-probs are floored at -50.
double truth_ratio(const NetworkSpec& net, const Checkpoint& ckpt,
                   const TruthRatioItem& item, int window, int vocab);

struct TruthRatioSet {
  std::vector<std::string> ids;
  std::vector<double> ratios;
};
TruthRatioSet truth_ratios(const NetworkSpec& net, const Checkpoint& ckpt,
                           const std::vector<TruthRatioItem>& items, int window,
                           int vocab);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test; p-value from the asymptotic
/// Kolmogorov distribution Q(d sqrt(nm/(n+m))), series truncated when terms
/// drop below 1e-12, clamped to [0, 1].
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// KS p-value between the truth-ratio samples of an unlearned and a
/// retrained model over the same question set.
double forget_quality(const TruthRatioSet& unlearned,
                      const TruthRatioSet& retrained);

struct ParetoPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

struct ParetoReport {
  std::vector<ParetoPoint> points;    // deduplicated input, stable order
  std::vector<ParetoPoint> frontier;  // non-dominated subset
};

/// Non-dominated set under the given axis orientations (true = larger is
/// better). Duplicate (x, y, label) points are removed, keeping the first.
ParetoReport pareto_report(std::vector<ParetoPoint> points, bool maximize_x,
                           bool maximize_y);

}  // namespace kfade
