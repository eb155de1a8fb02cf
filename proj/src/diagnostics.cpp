// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/diagnostics.hpp"

#include "fisher_moe/baselines.hpp"
#include "fisher_moe/fisher.hpp"
#include "fisher_moe/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fisher_moe {

namespace {

using kernels::Exec;

bool all_finite(const MoEModelState& m) {
  if (!m.router.allFinite()) return false;
  for (const auto& e : m.experts) {
    if (!e.first.allFinite() || !e.second.allFinite()) return false;
  }
  return true;
}

ModelShape shape_for(const ExperimentConfig& config, const GaussianMixtureSpec& task) {
  ModelShape shape;
  shape.n_experts = config.model.n_experts;
  shape.input_dim = task.input_dim;
  shape.n_classes = task.n_classes();
  shape.arch = config.model.expert_arch;
  shape.hidden = config.model.expert_arch == ExpertArch::kMlp ? config.model.hidden : 0;
  return shape;
}

ModelHyper hyper_for(const ExperimentConfig& config) {
  ModelHyper hyper;
  hyper.tau = config.model.tau;
  hyper.top_k = config.model.top_k;
  hyper.lambda = config.model.lambda;
  hyper.init_scale = config.model.init_scale;
  return hyper;
}

double path_length(const RunResult& result) {
  double total = 0.0;
  for (const auto& g : result.geodesic_steps) total += g.fr_displacement;
  if (result.config.diagnostics.geodesic_normalizer == "sphere") total *= 0.5;
  return total;
}

}  // namespace

const std::vector<std::string>& trajectory_columns() {
  static const std::vector<std::string> columns = {
      "step",          "fsi",
      "fsi_normalized", "fhs",
      "h_frob",        "task_loss",
      "accuracy",      "router_grad_norm",
      "per_step_geodesic_deviation", "per_step_geodesic_bound",
      "cosine_mean",   "routing_entropy",
      "load_imbalance", "expert_overlap",
      "gradient_norm"};
  return columns;
}

std::vector<double> trajectory_values(const TrajectoryRecord& r) {
  return {static_cast<double>(r.step),
          r.fsi,
          r.fsi_normalized,
          r.fhs,
          r.h_frob,
          r.task_loss,
          r.accuracy,
          r.router_grad_norm,
          r.per_step_geodesic_deviation,
          r.per_step_geodesic_bound,
          r.cosine_mean,
          r.routing_entropy,
          r.load_imbalance,
          r.expert_overlap,
          r.gradient_norm};
}

TrajectoryRecord analyze_checkpoint(const MoEModelState& model, const LabeledBatch& probe,
                                    int fim_batch_size, std::optional<double> h_frob_initial) {
  if (probe.size() == 0) throw DiagnosticsError("analyze_checkpoint: empty probe set");
  if (fim_batch_size < 1) throw DiagnosticsError("analyze_checkpoint: fim_batch_size must be >= 1");
  TrajectoryRecord r;
  r.step = model.step;

  const ProbabilityVector p_bar = marginal_routing(model, probe);
  const int n = model.n_experts();
  r.fsi = fsi(p_bar);
  r.fsi_normalized = r.fsi / fsi_max(n);
  r.routing_entropy = routing_entropy(p_bar);

  const LabeledBatch fim_batch = probe.head(fim_batch_size);
  std::vector<DiagonalFIM> fims;
  fims.reserve(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) fims.push_back(estimate_diagonal_fim(model, e, fim_batch));
  const HeterogeneityMatrix h = heterogeneity_matrix(fims, p_bar);
  r.h_frob = h.frob_norm;
  r.fhs = fhs(h.frob_norm, h_frob_initial.value_or(h.frob_norm)).value;

  const kernels::Evaluation eval = kernels::evaluate(model, probe, Exec::kParallel);
  r.task_loss = eval.mean_loss;
  r.accuracy = eval.accuracy;
  r.load_imbalance = load_imbalance(eval.top1_counts);

  const BackwardResult grad = kernels::loss_and_gradient(model, fim_batch, Exec::kParallel);
  r.router_grad_norm = grad.grad.router.norm();
  r.gradient_norm = std::sqrt(grad.grad.squared_norm());

  std::vector<Eigen::VectorXd> flat;
  flat.reserve(model.experts.size());
  for (const auto& e : model.experts) flat.push_back(e.flatten());
  r.cosine_mean = mean_pairwise_cosine(flat);
  r.expert_overlap = expert_overlap(flat);
  return r;
}

std::vector<TrajectoryRecord> igma_analyze(const std::vector<Checkpoint>& checkpoints,
                                           const LabeledBatch& probe, int fim_batch_size) {
  if (checkpoints.empty()) throw DiagnosticsError("igma_analyze: no checkpoints");
  std::vector<const Checkpoint*> ordered;
  for (const auto& c : checkpoints) ordered.push_back(&c);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Checkpoint* a, const Checkpoint* b) { return a->step < b->step; });
  if (ordered.front()->step != 0) {
    throw DiagnosticsError("igma_analyze: missing t0 checkpoint (step 0 is the FHS reference)");
  }
  std::vector<TrajectoryRecord> out;
  out.reserve(ordered.size());
  std::optional<double> h0;
  for (const Checkpoint* c : ordered) {
    TrajectoryRecord r = analyze_checkpoint(c->model, probe, fim_batch_size, h0);
    r.step = c->step;
    if (!h0) h0 = r.h_frob;
    out.push_back(r);
  }
  return out;
}

std::vector<long> checkpoint_schedule(long steps, double fraction) {
  if (steps < 0) throw DiagnosticsError("checkpoint_schedule: steps must be >= 0");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DiagnosticsError("checkpoint_schedule: fraction must be in (0, 1]");
  }
  const long interval = std::max(1L, std::lround(static_cast<double>(steps) * fraction));
  std::vector<long> out;
  for (long s = 0; s <= steps; s += interval) out.push_back(s);
  if (out.back() != steps) out.push_back(steps);
  return out;
}

std::string make_run_id(std::uint64_t seed) { return fmt::format("seed{}", seed); }

TrainingSession::TrainingSession(const ExperimentConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  task_ = make_task(config_.task, config_.model.n_experts);
  {
    Rng probe_rng = make_stream(seed_, StreamPurpose::kProbe);
    probe_ = sample_batch(task_, config_.diagnostics.probe_size, probe_rng);
  }
  geodesic_probe_ = probe_.head(config_.diagnostics.geodesic_probe_size).inputs;
  {
    Rng init_rng = make_stream(seed_, StreamPurpose::kInit);
    model_ = init_model(shape_for(config_, task_), hyper_for(config_), init_rng);
  }
  if (config_.training.optimizer == OptimizerKind::kAdam) adam_.emplace();
  data_rng_ = make_stream(seed_, StreamPurpose::kData);
  schedule_ = checkpoint_schedule(config_.training.steps, config_.diagnostics.checkpoint_fraction);
  track_geodesic_ =
      config_.diagnostics.track_geodesic && model_.dense() && config_.training.eta > 0.0;
  if (track_geodesic_) p_bar_ = kernels::mean_routing(model_, geodesic_probe_, Exec::kParallel);
  record_checkpoint();
}

void TrainingSession::record_checkpoint() {
  std::optional<double> h0;
  if (!trajectory_.empty()) h0 = h_frob_initial_;
  TrajectoryRecord r;
  try {
    r = analyze_checkpoint(model_, probe_, config_.diagnostics.fim_batch_size, h0);
  } catch (const FisherError&) {
    // Saturated experts carry no Fisher mass; past the first checkpoint this
    // is a numerical breakdown of training, recorded like a non-finite loss.
    if (trajectory_.empty()) throw;
    diverged_ = true;
    return;
  }
  if (trajectory_.empty()) h_frob_initial_ = r.h_frob;
  if (!geodesic_.empty() && geodesic_.back().step == model_.step) {
    r.per_step_geodesic_deviation = geodesic_.back().deviation;
    r.per_step_geodesic_bound = geodesic_.back().bound;
  }
  trajectory_.push_back(r);
  ++next_checkpoint_;
}

void TrainingSession::train_one_step() {
  const LabeledBatch batch = sample_batch(task_, config_.training.batch_size, data_rng_);
  const Eigen::MatrixXd router_before = model_.router;
  const MoEModelState before = track_geodesic_ ? model_ : MoEModelState{};
  const double eta = config_.training.eta;
  try {
    train_step_inplace(model_, batch, eta, adam_ ? &*adam_ : nullptr);
  } catch (const NonFiniteLossError&) {
    diverged_ = true;
    return;
  }
  if (!all_finite(model_)) {
    diverged_ = true;
    return;
  }
  if (!track_geodesic_) return;

  const Eigen::MatrixXd delta = model_.router - router_before;
  const kernels::RoutingTangent tangent =
      kernels::routing_tangent(before, geodesic_probe_, delta, Exec::kParallel);
  const ProbabilityVector p_prev(p_bar_);
  p_bar_ = kernels::mean_routing(model_, geodesic_probe_, Exec::kParallel);
  const ProbabilityVector p_next(p_bar_);
  const SphericalPoint phi_prev = sqrt_embed(p_prev);
  const SphericalPoint phi_next = sqrt_embed(p_next);

  GeodesicStep g;
  g.step = model_.step;
  g.deviation = geodesic_step_deviation(phi_prev, phi_next,
                                        sqrt_embed_differential(p_prev, tangent.dp));
  g.bound = geodesic_bound(eta, tangent.rms_logit_step / eta, model_.tau);
  g.fr_displacement = fisher_rao_distance(p_prev, p_next);
  g.fsi_after = fsi(p_next);
  geodesic_.push_back(g);
}

void TrainingSession::run_until(long target_step) {
  const long target = std::min(target_step, total_steps());
  while (!diverged_ && model_.step < target) {
    train_one_step();
    if (diverged_) break;
    if (next_checkpoint_ < schedule_.size() && model_.step == schedule_[next_checkpoint_]) {
      record_checkpoint();
    }
  }
}

void TrainingSession::replace_model(MoEModelState model) {
  if (model.step != model_.step) {
    throw DiagnosticsError("replace_model: replacement must keep the step counter");
  }
  model.validate();
  model_ = std::move(model);
  if (adam_) adam_.emplace();
  if (track_geodesic_) {
    track_geodesic_ = model_.dense();
    p_bar_ = kernels::mean_routing(model_, geodesic_probe_, Exec::kParallel);
  }
}

RunResult TrainingSession::finish() {
  run_until(total_steps());
  RunResult result;
  result.config = config_;
  result.seed = seed_;
  result.run_id = make_run_id(seed_);
  result.total_steps = total_steps();
  result.trajectory = trajectory_;
  result.geodesic_steps = geodesic_;

  Rng bayes_rng = make_stream(config_.task.task_seed, StreamPurpose::kBayes);
  const AccuracyEstimate optimal =
      bayes_optimal_accuracy(task_, config_.diagnostics.bayes_samples, bayes_rng);
  result.optimal_accuracy = optimal.accuracy;
  result.optimal_accuracy_std_error = optimal.std_error;

  if (diverged_) {
    result.final_accuracy = 0.0;
    result.failed = true;
    result.failure_reason = "diverged";
  } else {
    Rng eval_rng = make_stream(seed_, StreamPurpose::kEval);
    const LabeledBatch eval = sample_batch(task_, config_.diagnostics.eval_size, eval_rng);
    result.final_accuracy = kernels::evaluate(model_, eval, Exec::kParallel).accuracy;
    result.failed = is_failure(result.final_accuracy, result.optimal_accuracy);
    result.failure_reason = result.failed ? "accuracy" : "";
  }
  const double target = config_.campaign.fhs_fraction * static_cast<double>(total_steps());
  result.fhs_at_10pct = static_cast<double>(trajectory_.back().step) >= target
                            ? fhs_at_fraction(result, config_.campaign.fhs_fraction)
                            : trajectory_.back().fhs;
  return result;
}

RunResult run_training_with_diagnostics(const ExperimentConfig& config, std::uint64_t seed) {
  TrainingSession session(config, seed);
  return session.finish();
}

double fhs_at_fraction(const RunResult& result, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DiagnosticsError(fmt::format("fhs_at_fraction: fraction {} outside (0, 1]", fraction));
  }
  if (result.trajectory.empty()) throw DiagnosticsError("fhs_at_fraction: empty trajectory");
  const double target = fraction * static_cast<double>(result.total_steps);
  if (static_cast<double>(result.trajectory.back().step) < target) {
    throw DiagnosticsError(
        fmt::format("fhs_at_fraction: trajectory ends at step {} before step {}",
                    result.trajectory.back().step, target));
  }
  const TrajectoryRecord* best = nullptr;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& r : result.trajectory) {
    const double gap = std::abs(static_cast<double>(r.step) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = &r;
    }
  }
  return best->fhs;
}

GeodesicValidationRow summarize_geodesic(const RunResult& result) {
  GeodesicValidationRow row;
  row.tau = result.config.model.tau;
  double dev = 0.0;
  double bound = 0.0;
  for (const auto& g : result.geodesic_steps) {
    dev += g.deviation;
    bound += g.bound;
    ++row.steps;
    if (g.deviation > g.bound * (1.0 + 1e-9) + 1e-15) ++row.violations;
    if (g.bound > 0.0) row.max_ratio = std::max(row.max_ratio, g.deviation / g.bound);
  }
  const double length = path_length(result);
  if (length > 0.0) {
    row.measured_fraction = dev / length;
    row.bound_fraction = bound / length;
  }
  return row;
}

std::vector<GeodesicValidationRow> geodesic_validation(const ExperimentConfig& config,
                                                       const std::vector<double>& taus) {
  if (config.model.top_k != 0 && config.model.top_k < config.model.n_experts) {
    throw DiagnosticsError("geodesic validation requires dense routing");
  }
  if (taus.empty()) throw DiagnosticsError("geodesic_validation: no temperatures");
  if (!(config.training.eta > 0.0)) {
    throw DiagnosticsError("geodesic_validation: needs eta > 0");
  }
  std::vector<GeodesicValidationRow> rows;
  for (double tau : taus) {
    if (!(tau > 0.0)) throw DiagnosticsError("geodesic_validation: taus must be > 0");
    ExperimentConfig c = config;
    c.model.tau = tau;
    c.diagnostics.track_geodesic = true;
    GeodesicValidationRow total;
    total.tau = tau;
    for (std::uint64_t seed : config.campaign.seeds) {
      const GeodesicValidationRow one = summarize_geodesic(run_training_with_diagnostics(c, seed));
      total.measured_fraction += one.measured_fraction;
      total.bound_fraction += one.bound_fraction;
      total.steps += one.steps;
      total.violations += one.violations;
      total.max_ratio = std::max(total.max_ratio, one.max_ratio);
    }
    const double n = static_cast<double>(config.campaign.seeds.size());
    total.measured_fraction /= n;
    total.bound_fraction /= n;
    rows.push_back(total);
  }
  return rows;
}

}  // namespace fisher_moe
