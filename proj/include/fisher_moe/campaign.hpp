// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-run campaigns: hyperparameter lotteries scored by FHS and the
// baselines, threshold sweeps, branching intervention studies and
// temperature sweeps of the geodesic deviation. Runs execute concurrently;
// results are always ordered by (config index, seed).

#pragma once

#include "fisher_moe/baselines.hpp"
#include "fisher_moe/config.hpp"
#include "fisher_moe/diagnostics.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fisher_moe {

/// A campaign whose outcome cannot support the requested analysis
/// (single-class labels, nothing flagged).
class DegenerateCampaignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LotteryDraw {
  int index = 0;
  double lambda = 0.0;
  double eta = 0.0;
  double init_scale = 0.0;
  std::string separation_label;  // "low" or "high"
  double separation = 0.0;
  int n_experts = 0;
};

/// Uniform draws from the lottery grid, reproducible from the first campaign
/// seed.
std::vector<LotteryDraw> draw_lottery(const ExperimentConfig& config, int count);

ExperimentConfig apply_draw(const ExperimentConfig& config, const LotteryDraw& draw);

/// Seed of the run for config `index` under campaign seed `seed`.
std::uint64_t run_seed(std::uint64_t seed, int index);

/// Everything a campaign keeps from one run.
struct RunDigest {
  std::string run_id;
  int index = 0;
  std::uint64_t campaign_seed = 0;
  std::uint64_t seed = 0;
  LotteryDraw draw;
  double fhs_at_fraction = 0.0;
  double val_loss_score = 0.0;
  bool val_loss_flag = false;
  double cosine_at_fraction = 0.0;
  double entropy_at_fraction = 0.0;
  double grad_norm_at_fraction = 0.0;
  double overlap_at_fraction = 0.0;
  double imbalance_at_fraction = 0.0;
  double final_fsi = 0.0;
  double final_fsi_normalized = 0.0;
  double final_fhs = 0.0;
  double final_accuracy = 0.0;
  double optimal_accuracy = 0.0;
  bool failed = false;
  std::string failure_reason;
};

RunDigest digest_run(const RunResult& result, int index, std::uint64_t campaign_seed,
                     const LotteryDraw& draw, double fraction);

/// Column names and cells of the per-run scatter CSV.
const std::vector<std::string>& digest_columns();
std::vector<std::string> digest_cells(const RunDigest& d);
std::vector<RunDigest> parse_digest_csv(const std::string& text);

struct BaselineScore {
  std::string metric;
  std::string orientation;  // how the metric is turned into a failure score
  double auc = 0.0;
  double corr_with_accuracy = 0.0;  // Pearson r of the raw metric with final accuracy
};

struct ArmOutcome {
  std::string arm;
  int runs = 0;
  int recovered = 0;
  double recovery_rate = 0.0;
  double mean_final_accuracy = 0.0;
};

struct CampaignSummary {
  std::vector<RunDigest> runs;
  int failures = 0;
  double auc_fhs = 0.0;
  double auc_val_loss = 0.0;
  std::vector<ThresholdReport> threshold_reports;
  std::vector<BaselineScore> baselines;
  double corr_final_fsi_accuracy = 0.0;
  double corr_fhs_accuracy = 0.0;
  std::vector<ArmOutcome> intervention_outcomes;
};

/// Runs f(i) for i in [0, count) on up to `parallel` threads (0: all
/// hardware threads) and returns the results in index order. The first
/// exception, by index, is rethrown after all work has finished.
template <class T>
std::vector<T> run_indexed(int count, int parallel, const std::function<T(int)>& f);

std::vector<PredictionScore> fhs_scores(const std::vector<RunDigest>& runs);
std::vector<PredictionScore> val_loss_scores(const std::vector<RunDigest>& runs);

/// Scores digests that already exist (AUCs, baselines, correlations,
/// threshold sweep). Throws DegenerateCampaignError on single-class labels.
CampaignSummary summarize_campaign(std::vector<RunDigest> runs,
                                   const std::vector<double>& thresholds);

/// Trains every lottery draw under every campaign seed.
std::vector<RunDigest> failure_study_runs(const ExperimentConfig& config);

/// failure_study_runs followed by summarize_campaign.
CampaignSummary failure_study(const ExperimentConfig& config);

struct FlaggedRun {
  RunDigest digest;  // the unbranched run
  std::vector<double> arm_accuracy;  // per arm, in arm order
  std::vector<bool> arm_recovered;
  bool control_identical = false;  // arm (a) byte-identical to the unbranched run
};

struct InterventionStudy {
  std::vector<FlaggedRun> flagged;
  std::vector<ArmOutcome> arms;
  int draws_examined = 0;
  bool control_identical = false;  // all flagged runs
};

inline const std::vector<std::string>& intervention_arms() {
  static const std::vector<std::string> arms = {"a_continue", "b_reinit_experts",
                                                "c_reinit_experts_half_lambda", "d_full_reinit"};
  return arms;
}

/// Examines lottery draws in order until campaign.min_flagged runs show
/// FHS > 1 at the campaign fraction (or campaign.max_runs draws), branches
/// each flagged run into the four arms and trains all arms to the end.
InterventionStudy intervention_study(const ExperimentConfig& config);

nlohmann::ordered_json summary_json(const CampaignSummary& s);
nlohmann::ordered_json intervention_json(const InterventionStudy& s);
std::string threshold_csv(const std::vector<ThresholdReport>& reports);
std::string geodesic_table_csv(const std::vector<GeodesicValidationRow>& rows);

}  // namespace fisher_moe

#include "fisher_moe/campaign_impl.hpp"
