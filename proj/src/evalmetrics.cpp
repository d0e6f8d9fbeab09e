// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kfade/rng.hpp"

namespace kfade {

double categorical_kl(const Vector& log_p, const Vector& log_q) {
  if (log_p.size() != log_q.size()) {
    throw Error::config("categorical_kl: dimension mismatch");
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    kl += std::exp(log_p(i)) * (log_p(i) - log_q(i));
  }
  if (kl < -1e-12) {
    throw Error::numeric("categorical_kl: negative divergence beyond roundoff");
  }
  return std::max(kl, 0.0);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error::config("quantile: empty sample");
  if (q < 0.0 || q > 1.0) throw Error::config("quantile: q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

BootstrapCi bootstrap_mean_ci(const std::vector<double>& values, int resamples,
                              std::uint64_t seed) {
  if (values.empty()) throw Error::config("bootstrap: empty sample");
  if (resamples <= 0) throw Error::config("bootstrap: resamples must be positive");
  Rng rng(seed);
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      total += values[rng.bounded(values.size())];
    }
    means[r] = total / static_cast<double>(values.size());
  }
  return {quantile(means, 0.025), quantile(means, 0.975)};
}

KlReport kl_specificity(const NetworkSpec& net, const Checkpoint& base,
                        const Checkpoint& test, const Dataset& eval_set,
                        int bootstrap_n, std::uint64_t seed) {
  validate_checkpoint(net, base);
  validate_checkpoint(net, test);
  if (eval_set.empty()) throw Error::config("kl_specificity: empty eval set");

  const Matrix x = stack_features(eval_set);
  const BatchCapture cap_base = forward(net, base, x);
  const BatchCapture cap_test = forward(net, test, x);

  KlReport report;
  report.values.reserve(eval_set.size());
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const Vector lp = log_softmax(cap_base.logits.row(i).transpose());
    const Vector lq = log_softmax(cap_test.logits.row(i).transpose());
    report.values.push_back(categorical_kl(lp, lq));
  }
  double total = 0.0;
  for (double v : report.values) total += v;
  report.mean = total / static_cast<double>(report.values.size());
  report.p50 = quantile(report.values, 0.50);
  report.p90 = quantile(report.values, 0.90);
  report.p99 = quantile(report.values, 0.99);
  const BootstrapCi ci = bootstrap_mean_ci(report.values, bootstrap_n, seed);
  report.ci_low = ci.low;
  report.ci_high = ci.high;
  return report;
}

double truth_ratio(const NetworkSpec& net, const Checkpoint& ckpt,
                   const TruthRatioItem& item, int window, int vocab) {
  if (item.perturbed.empty()) {
    throw Error::config("truth_ratio: needs at least one perturbed answer");
  }
  if (item.answer.empty()) throw Error::config("truth_ratio: empty answer");
  const auto normalized_prob = [&](const std::vector<int>& answer) {
    if (answer.empty()) throw Error::config("truth_ratio: empty perturbed answer");
    const double logp =
        sequence_log_prob(net, ckpt, item.question, answer, window, vocab);
    return std::exp(logp / static_cast<double>(answer.size()));
  };
  double perturbed_mean = 0.0;
  for (const auto& wrong : item.perturbed) perturbed_mean += normalized_prob(wrong);
  perturbed_mean /= static_cast<double>(item.perturbed.size());
  return perturbed_mean / normalized_prob(item.answer);
}

TruthRatioSet truth_ratios(const NetworkSpec& net, const Checkpoint& ckpt,
                           const std::vector<TruthRatioItem>& items, int window,
                           int vocab) {
  TruthRatioSet out;
  for (const TruthRatioItem& item : items) {
    out.ids.push_back(item.id);
    out.ratios.push_back(truth_ratio(net, ckpt, item, window, vocab));
  }
  return out;
}

namespace {

/// Kolmogorov tail Q(t) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 t^2).
double kolmogorov_tail(double t) {
  if (t <= 1e-8) return 1.0;
  double total = 0.0;
  for (int j = 1; j <= 100000; ++j) {
    const double term = std::exp(-2.0 * j * j * t * t);
    if (term < 1e-12) break;
    total += (j % 2 == 1 ? term : -term);
  }
  return std::clamp(2.0 * total, 0.0, 1.0);
}

}  // namespace

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error::config("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  double d = 0.0;
  std::size_t ia = 0, ib = 0;
  while (ia < a.size() && ib < b.size()) {
    const double t = std::min(a[ia], b[ib]);
    while (ia < a.size() && a[ia] <= t) ++ia;
    while (ib < b.size() && b[ib] <= t) ++ib;
    d = std::max(d, std::abs(static_cast<double>(ia) / na -
                             static_cast<double>(ib) / nb));
  }
  d = std::max(d, std::abs(1.0 - static_cast<double>(ib) / nb));
  d = std::max(d, std::abs(static_cast<double>(ia) / na - 1.0));

  KsResult out;
  out.statistic = d;
  out.p_value = kolmogorov_tail(d * std::sqrt(na * nb / (na + nb)));
  return out;
}

double forget_quality(const TruthRatioSet& unlearned,
                      const TruthRatioSet& retrained) {
  if (unlearned.ids != retrained.ids) {
    throw Error::config("forget_quality: question sets do not match");
  }
  if (unlearned.ratios == retrained.ratios) return 1.0;
  return ks_two_sample(unlearned.ratios, retrained.ratios).p_value;
}

ParetoReport pareto_report(std::vector<ParetoPoint> points, bool maximize_x,
                           bool maximize_y) {
  ParetoReport report;
  std::set<std::tuple<double, double, std::string>> seen;
  for (ParetoPoint& p : points) {
    if (seen.insert({p.x, p.y, p.label}).second) {
      report.points.push_back(std::move(p));
    }
  }
  const auto oriented = [&](const ParetoPoint& p) {
    return std::pair<double, double>(maximize_x ? p.x : -p.x,
                                     maximize_y ? p.y : -p.y);
  };
  for (const ParetoPoint& p : report.points) {
    const auto [px, py] = oriented(p);
    bool dominated = false;
    for (const ParetoPoint& q : report.points) {
      const auto [qx, qy] = oriented(q);
      if (qx >= px && qy >= py && (qx > px || qy > py)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) report.frontier.push_back(p);
  }
  return report;
}

}  // namespace kfade
