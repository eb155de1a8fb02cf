// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a flat INI-style file.
//
//   # comment
//   [section]
//   key = value
//
// Every key has a default; unknown sections or keys are rejected with the
// offending line number. serialize_config() writes every key, so the echoed
// config in a run's outputs is complete.

#pragma once

#include "fisher_moe/moe_model.hpp"
#include "fisher_moe/synthetic_task.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fisher_moe {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& message);
  int line;
};

struct TaskConfig {
  TaskLayout layout = TaskLayout::kOrthogonal;
  int n_clusters = 0;  // 0: two per expert (ring) or one per expert (orthogonal)
  int input_dim = 16;
  int n_classes = 0;  // 0: one class per cluster
  double separation = 4.0;
  double covariance_scale = 1.0;
  std::uint64_t task_seed = 1234;
  // Explicit mixture; overrides the generated one when non-empty.
  std::vector<std::vector<double>> means;
  std::vector<double> mixture_weights;
  std::vector<int> labels;

  bool operator==(const TaskConfig&) const = default;
};

struct ModelConfig {
  int n_experts = 4;
  double tau = 1.0;
  int top_k = 0;  // 0: dense
  double lambda = 0.0;
  double init_scale = 1.0;
  ExpertArch expert_arch = ExpertArch::kLinear;
  int hidden = 16;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainingConfig {
  double eta = 0.03;
  long steps = 2000;
  int batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::kGd;

  bool operator==(const TrainingConfig&) const = default;
};

struct DiagnosticsConfig {
  double checkpoint_fraction = 0.025;
  int fim_batch_size = 512;
  int probe_size = 2048;
  int eval_size = 4096;
  int bayes_samples = 20000;
  bool track_geodesic = true;
  int geodesic_probe_size = 512;
  std::string geodesic_normalizer = "fisher_rao";  // or "sphere" (half the Fisher-Rao length)

  bool operator==(const DiagnosticsConfig&) const = default;
};

struct LotteryConfig {
  std::vector<double> lambdas{0.0, 0.01, 0.05, 0.1, 0.5};
  std::vector<double> etas{3e-3, 3e-2, 3e-1};
  std::vector<double> init_scales{1e-3, 1.0, 10.0};
  std::vector<int> n_experts{4, 8};
  double separation_low = 2.0;
  double separation_high = 5.0;

  bool operator==(const LotteryConfig&) const = default;
};

struct CampaignConfig {
  std::vector<std::uint64_t> seeds{1};
  int runs = 40;
  int parallel = 0;  // 0: hardware concurrency
  double fhs_fraction = 0.1;
  std::vector<double> taus{0.5, 1.0, 2.0};
  std::vector<double> thresholds{0.8, 0.9, 1.0, 1.1, 1.2};
  int min_flagged = 10;
  int max_runs = 120;

  bool operator==(const CampaignConfig&) const = default;
};

struct ExperimentConfig {
  TaskConfig task;
  ModelConfig model;
  TrainingConfig training;
  DiagnosticsConfig diagnostics;
  LotteryConfig lottery;
  CampaignConfig campaign;
  std::string output_dir = "out";

  /// Throws ConfigError (line 0) on a violated constraint.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

/// Builds the mixture described by the task section for a model with
/// `n_experts` experts.
GaussianMixtureSpec make_task(const TaskConfig& task, int n_experts);

/// Parses "1, 2, 3" style lists.
std::vector<double> parse_real_list(const std::string& text);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// FISHER_MOE_SEED, when set, replaces the campaign seeds with that one seed.
void apply_seed_override(ExperimentConfig& config);

}  // namespace fisher_moe
