// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint analysis and instrumented training runs.
//
// At every checkpoint the analysis computes the marginal routing distribution
// on a fixed probe set, its FSI, the diagonal empirical Fisher of each expert,
// the routing-weighted heterogeneity matrix H and FHS = |H_t| / |H_0|, plus
// the heuristic baselines. Between consecutive steps of a dense run it also
// measures how far the routing marginal strays from the great circle
// predicted by the linearized update, next to the curvature bound.

#pragma once

#include "fisher_moe/config.hpp"
#include "fisher_moe/moe_model.hpp"
#include "fisher_moe/synthetic_task.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fisher_moe {

class DiagnosticsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrajectoryRecord {
  long step = 0;
  double fsi = 0.0;
  double fsi_normalized = 0.0;
  double fhs = 0.0;
  double h_frob = 0.0;
  double task_loss = 0.0;
  double accuracy = 0.0;
  double router_grad_norm = 0.0;
  double per_step_geodesic_deviation = 0.0;  // last step before this checkpoint
  double per_step_geodesic_bound = 0.0;
  double cosine_mean = 0.0;
  double routing_entropy = 0.0;
  double load_imbalance = 0.0;
  double expert_overlap = 0.0;
  double gradient_norm = 0.0;  // all parameters

  bool operator==(const TrajectoryRecord&) const = default;
};

/// Column names of the trajectory CSV, in field order.
const std::vector<std::string>& trajectory_columns();
std::vector<double> trajectory_values(const TrajectoryRecord& r);

/// One optimizer step seen through the routing marginal (dense runs only).
struct GeodesicStep {
  long step = 0;               // step index after the update
  double deviation = 0.0;      // |phi_{t+1} - exp_phi_t(v)|
  double bound = 0.0;          // curvature bound for this step
  double fr_displacement = 0.0;  // d_FR(pbar_t, pbar_{t+1})
  double fsi_after = 0.0;

  bool operator==(const GeodesicStep&) const = default;
};

struct Checkpoint {
  long step = 0;
  MoEModelState model;
};

/// Analyzes one checkpoint. FHS is relative to `h_frob_initial`; pass
/// std::nullopt at t = 0 to get FHS = |H| / (|H| + eps).
TrajectoryRecord analyze_checkpoint(const MoEModelState& model, const LabeledBatch& probe,
                                    int fim_batch_size, std::optional<double> h_frob_initial);

/// Runs the analysis over checkpoints in step order. Needs a step-0
/// checkpoint, whose H is the FHS reference.
std::vector<TrajectoryRecord> igma_analyze(const std::vector<Checkpoint>& checkpoints,
                                           const LabeledBatch& probe, int fim_batch_size);

struct RunResult {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string run_id;
  long total_steps = 0;
  std::vector<TrajectoryRecord> trajectory;
  std::vector<GeodesicStep> geodesic_steps;
  double final_accuracy = 0.0;
  double optimal_accuracy = 0.0;
  double optimal_accuracy_std_error = 0.0;
  bool failed = false;
  std::string failure_reason;  // "", "accuracy", "diverged"
  double fhs_at_10pct = 0.0;
};

/// Steps at which checkpoints are analyzed: 0, k, 2k, ... and the last step,
/// with k = max(1, round(steps * fraction)).
std::vector<long> checkpoint_schedule(long steps, double fraction);

/// A training run that can be advanced in pieces and copied to branch it.
/// Copies share nothing, so a copy continues exactly as the original would.
class TrainingSession {
 public:
  TrainingSession(const ExperimentConfig& config, std::uint64_t seed);

  long step() const noexcept { return model_.step; }
  long total_steps() const noexcept { return config_.training.steps; }
  bool diverged() const noexcept { return diverged_; }
  const MoEModelState& model() const noexcept { return model_; }
  const ExperimentConfig& config() const noexcept { return config_; }
  const GaussianMixtureSpec& task() const noexcept { return task_; }
  const std::vector<TrajectoryRecord>& trajectory() const noexcept { return trajectory_; }

  /// Trains up to `target_step` (clamped to the schedule), analyzing every
  /// scheduled checkpoint on the way. Stops early on divergence.
  void run_until(long target_step);

  /// Swaps in a new model at the current step (optimizer state is reset).
  void replace_model(MoEModelState model);

  /// Trains to the end and evaluates final and Bayes-optimal accuracy.
  RunResult finish();

 private:
  void record_checkpoint();
  void train_one_step();

  ExperimentConfig config_;
  std::uint64_t seed_;
  GaussianMixtureSpec task_;
  LabeledBatch probe_;
  SampleMatrix geodesic_probe_;
  MoEModelState model_;
  std::optional<AdamState> adam_;
  Rng data_rng_;
  std::vector<long> schedule_;
  std::size_t next_checkpoint_ = 0;
  double h_frob_initial_ = 0.0;
  bool track_geodesic_ = false;
  Eigen::VectorXd p_bar_;
  std::vector<TrajectoryRecord> trajectory_;
  std::vector<GeodesicStep> geodesic_;
  bool diverged_ = false;
};

std::string make_run_id(std::uint64_t seed);

/// Trains one model under `config` with the given seed.
RunResult run_training_with_diagnostics(const ExperimentConfig& config, std::uint64_t seed);

/// FHS at the checkpoint nearest to fraction * total_steps, earlier on ties.
double fhs_at_fraction(const RunResult& result, double fraction);

struct GeodesicValidationRow {
  double tau = 0.0;
  double measured_fraction = 0.0;  // mean over seeds of sum(deviation) / path length
  double bound_fraction = 0.0;     // mean over seeds of sum(bound) / path length
  long steps = 0;
  long violations = 0;             // steps with deviation above the bound
  double max_ratio = 0.0;          // largest deviation / bound
};

/// Trains once per (tau, seed) and summarizes the per-step geodesic deviation.
/// Requires dense routing.
std::vector<GeodesicValidationRow> geodesic_validation(const ExperimentConfig& config,
                                                       const std::vector<double>& taus);

/// Same summary for an already finished run.
GeodesicValidationRow summarize_geodesic(const RunResult& result);

}  // namespace fisher_moe
