// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace kfade {

void UnlearnPlan::validate(const NetworkSpec& net, const Dataset& forget) const {
  if (steps <= 0) throw Error::config("unlearn plan: steps must be positive");
  if (static_cast<std::size_t>(steps) > forget.size()) {
    throw Error::config("unlearn plan: steps exceed forget set size");
  }
  if (step_size < 0.0 || !std::isfinite(step_size)) {
    throw Error::config("unlearn plan: step_size must be nonnegative and finite");
  }
  if (damping < 0.0 || !std::isfinite(damping)) {
    throw Error::config("unlearn plan: damping must be nonnegative and finite");
  }
  if (target_layers.empty()) {
    throw Error::config("unlearn plan: target_layers must be nonempty");
  }
  for (const std::string& name : target_layers) net.layer_index(name);
  if (forget_loss == LossKind::margin && net.output_dim() < 2) {
    throw Error::config("unlearn plan: margin loss needs at least 2 classes");
  }
}

namespace {

/// Contiguous K-way split of a seeded shuffle; the remainder goes to the
/// earliest parts.
std::vector<Dataset> split_forget_set(const Dataset& forget, int parts,
                                      std::uint64_t seed) {
  std::vector<int> order(forget.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x8f1bbcdcULL);
  rng.shuffle(order);

  std::vector<Dataset> out(parts);
  const std::size_t base = forget.size() / parts;
  const std::size_t remainder = forget.size() % parts;
  std::size_t cursor = 0;
  for (int k = 0; k < parts; ++k) {
    Dataset part;
    part.feature_dim = forget.feature_dim;
    part.num_classes = forget.num_classes;
    const std::size_t count = base + (static_cast<std::size_t>(k) < remainder ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      part.examples.push_back(forget.examples[order[cursor++]]);
    }
    out[k] = std::move(part);
  }
  return out;
}

std::vector<Matrix> restrict_to_targets(const std::vector<Matrix>& grads,
                                        const std::vector<int>& layer_indices) {
  std::vector<Matrix> out;
  out.reserve(layer_indices.size());
  for (int li : layer_indices) out.push_back(grads[li]);
  return out;
}

double flat_inner(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += a[i].cwiseProduct(b[i]).sum();
  }
  return total;
}

double flat_norm(const std::vector<Matrix>& a) {
  return std::sqrt(flat_inner(a, a));
}

}  // namespace

UnlearnResult kfade_unlearn(const NetworkSpec& net, const Checkpoint& theta,
                            const Dataset& forget, const Dataset& retain,
                            const UnlearnPlan& plan,
                            const CurvatureState* prefit) {
  net.validate();
  validate_checkpoint(net, theta);
  plan.validate(net, forget);
  if (forget.empty()) throw Error::config("kfade: empty forget set");
  if (retain.empty() && plan.estimator != EstimatorKind::identity && !prefit) {
    throw Error::config("kfade: empty retain set");
  }
  if (prefit) {
    if (prefit->kind != plan.estimator || prefit->target_layers != plan.target_layers) {
      throw Error::config("kfade: prefit state does not match plan");
    }
  }

  const std::vector<Dataset> parts =
      split_forget_set(forget, plan.steps, plan.seed);
  CurvatureState state = prefit ? *prefit
                                : make_identity_state(net, plan.target_layers);
  Rng fit_rng(plan.seed ^ 0x51ed2701ULL);

  Checkpoint current = theta;
  UnlearnResult result;
  for (int k = 0; k < plan.steps; ++k) {
    const bool need_fit =
        plan.estimator != EstimatorKind::identity && !prefit &&
        (plan.refit_every_step || k == 0);
    if (need_fit) {
      state = fit_curvature(net, current, retain, plan.estimator,
                            plan.fisher_mode, plan.target_layers, fit_rng);
    }

    StepRecord rec;
    rec.forget_loss_before = dataset_loss(net, current, forget, plan.forget_loss);

    auto [part_loss, full_grads] =
        dataset_loss_gradient(net, current, parts[k], plan.forget_loss);
    (void)part_loss;
    const std::vector<Matrix> g = restrict_to_targets(full_grads, state.layer_indices);
    rec.grad_norm = flat_norm(g);
    if (rec.grad_norm == 0.0) {
      throw Error::numeric("kfade: zero forget gradient, nothing to unlearn");
    }

    const std::vector<Matrix> r = ihvp(state, g, plan.damping);
    rec.gr_inner = flat_inner(g, r);
    if (!(rec.gr_inner > 0.0) || !std::isfinite(rec.gr_inner)) {
      std::ostringstream oss;
      oss << "kfade: <g, r> = " << rec.gr_inner
          << " is not positive at step " << (k + 1)
          << " (grad norm " << rec.grad_norm << ", damping " << plan.damping
          << "); the damped curvature is not positive definite";
      throw Error::numeric(oss.str());
    }

    const double scale = plan.step_size / std::sqrt(rec.gr_inner);
    std::vector<Matrix> delta(r.size());
    for (std::size_t t = 0; t < r.size(); ++t) delta[t] = scale * r[t];
    rec.step_quadratic = quadratic_form(state, delta, plan.damping);

    for (std::size_t t = 0; t < state.layer_indices.size(); ++t) {
      current.weights[state.layer_indices[t]] += delta[t];
    }
    current.steps += 1;

    rec.forget_loss_after = dataset_loss(net, current, forget, plan.forget_loss);
    rec.checkpoint_hash = checkpoint_hash(current);
    result.trace.steps.push_back(rec);
  }

  current.provenance = "kfade";
  result.checkpoint = std::move(current);
  return result;
}

UnlearnResult grad_ascent_baseline(const NetworkSpec& net, const Checkpoint& theta,
                                   const Dataset& forget, int steps, double lr,
                                   LossKind loss) {
  net.validate();
  validate_checkpoint(net, theta);
  if (forget.empty()) throw Error::config("grad_ascent: empty forget set");
  if (steps <= 0) throw Error::config("grad_ascent: steps must be positive");

  Checkpoint current = theta;
  UnlearnResult result;
  for (int k = 0; k < steps; ++k) {
    StepRecord rec;
    rec.forget_loss_before = dataset_loss(net, current, forget, loss);
    auto [mean_loss, grads] = dataset_loss_gradient(net, current, forget, loss);
    if (!std::isfinite(mean_loss)) {
      throw Error::numeric("grad_ascent diverged: non-finite forget loss");
    }
    rec.grad_norm = flat_norm(grads);
    for (std::size_t l = 0; l < current.weights.size(); ++l) {
      current.weights[l] += lr * grads[l];
    }
    if (!std::all_of(current.weights.begin(), current.weights.end(),
                     [](const Matrix& w) { return all_finite(w); })) {
      throw Error::numeric("grad_ascent diverged: non-finite weights");
    }
    current.steps += 1;
    rec.forget_loss_after = dataset_loss(net, current, forget, loss);
    rec.checkpoint_hash = checkpoint_hash(current);
    result.trace.steps.push_back(rec);
  }
  current.provenance = "grad_ascent";
  result.checkpoint = std::move(current);
  return result;
}

UnlearnResult grad_diff_baseline(const NetworkSpec& net, const Checkpoint& theta,
                                 const Dataset& forget, const Dataset& retain,
                                 int steps, double lr, double retain_weight,
                                 LossKind loss) {
  net.validate();
  validate_checkpoint(net, theta);
  if (forget.empty()) throw Error::config("grad_diff: empty forget set");
  if (retain.empty()) throw Error::config("grad_diff: empty retain set");
  if (steps <= 0) throw Error::config("grad_diff: steps must be positive");

  Checkpoint current = theta;
  UnlearnResult result;
  for (int k = 0; k < steps; ++k) {
    StepRecord rec;
    rec.forget_loss_before = dataset_loss(net, current, forget, loss);
    auto [forget_mean, forget_grads] =
        dataset_loss_gradient(net, current, forget, loss);
    auto [retain_mean, retain_grads] =
        dataset_loss_gradient(net, current, retain, LossKind::cross_entropy);
    if (!std::isfinite(forget_mean) || !std::isfinite(retain_mean)) {
      throw Error::numeric("grad_diff diverged: non-finite loss");
    }
    for (std::size_t l = 0; l < current.weights.size(); ++l) {
      current.weights[l] += lr * (forget_grads[l] - retain_weight * retain_grads[l]);
    }
    if (!std::all_of(current.weights.begin(), current.weights.end(),
                     [](const Matrix& w) { return all_finite(w); })) {
      throw Error::numeric("grad_diff diverged: non-finite weights");
    }
    current.steps += 1;
    rec.forget_loss_after = dataset_loss(net, current, forget, loss);
    rec.checkpoint_hash = checkpoint_hash(current);
    result.trace.steps.push_back(rec);
  }
  current.provenance = "grad_diff";
  result.checkpoint = std::move(current);
  return result;
}

Checkpoint transfer_update(const Checkpoint& finetuned,
                           const Checkpoint& unlearned, const Checkpoint& base) {
  if (finetuned.weights.size() != unlearned.weights.size() ||
      finetuned.weights.size() != base.weights.size()) {
    throw Error::config("transfer_update: layer count mismatch");
  }
  Checkpoint out = finetuned;
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    if (unlearned.weights[l].rows() != out.weights[l].rows() ||
        unlearned.weights[l].cols() != out.weights[l].cols() ||
        base.weights[l].rows() != out.weights[l].rows() ||
        base.weights[l].cols() != out.weights[l].cols()) {
      throw Error::config("transfer_update: weight shape mismatch");
    }
    out.weights[l] += unlearned.weights[l] - base.weights[l];
  }
  out.provenance = "transfer";
  return out;
}

}  // namespace kfade
