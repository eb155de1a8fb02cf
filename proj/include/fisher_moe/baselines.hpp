// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Heuristic specialization metrics, the validation-loss early-stopping
// predictor, and rank-based evaluation of failure predictors.

#pragma once

#include "fisher_moe/simplex.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fisher_moe {

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b);

/// Shannon entropy in nats, 0 log 0 = 0.
double routing_entropy(const ProbabilityVector& p);

/// Coefficient of variation (population std / mean) of the per-expert
/// token fractions.
double load_imbalance(std::span<const long> counts);

/// Mean pairwise |cosine| of flattened expert weights.
double expert_overlap(std::span<const Eigen::VectorXd> flattened_experts);

/// Mean pairwise signed cosine of flattened expert weights.
double mean_pairwise_cosine(std::span<const Eigen::VectorXd> flattened_experts);

struct PredictionScore {
  std::string run_id;
  double score = 0.0;  // higher = more likely failure
  bool failed = false;
};

/// Least-squares fit of loss against training fraction.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};
LinearFit fit_line(std::span<const std::pair<double, double>> points);

struct ValLossVerdict {
  bool predicts_failure = false;
  double score = 0.0;
  LinearFit fit;
  double extrapolation_ratio = 1.0;  // loss extrapolated to fraction 1.0 over current loss
};

/// Flags failure when slope > 0 with R^2 > 0.7, or when the linear
/// extrapolation to the end of training exceeds 1.5x the current loss. Score
/// is 1 when flagged, otherwise max(relative slope, ratio - 1) capped below 1.
ValLossVerdict val_loss_failure_predictor(std::span<const std::pair<double, double>> loss_series);

/// Mann-Whitney AUC of score against the failure label, ties count 1/2.
double auc(std::span<const PredictionScore> scores);

struct ThresholdReport {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // nothing flagged; precision reported as 0
  long true_positives = 0;
  long false_positives = 0;
  long false_negatives = 0;
  long true_negatives = 0;
};

/// Predicts failure iff score > threshold.
std::vector<ThresholdReport> threshold_sweep(std::span<const PredictionScore> scores,
                                             std::span<const double> thresholds);

/// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

/// Machine-checkable demonstration that parameter- and logit-level metrics
/// change under transformations that leave the Fisher-Rao quantities fixed.
struct InvarianceReport {
  double cosine_before = 0.0;  // cos((1,1), (1,0))
  double cosine_after = 0.0;   // same pair after diag(1, 2)
  double cosine_ratio = 0.0;

  double entropy_logits_1 = 0.0;  // H(softmax((1, 0)))
  double entropy_logits_2 = 0.0;  // H(softmax((2, 0)))
  double entropy_change = 0.0;

  double fsi_original = 0.0;
  double fsi_permuted_max_abs_delta = 0.0;
  double fsi_shift_max_abs_delta = 0.0;
  double fsi_tau_rescale_max_abs_delta = 0.0;
  double fr_permuted_max_abs_delta = 0.0;
  int trials = 0;

  bool cosine_changes() const;
  bool entropy_changes() const;
  bool fisher_rao_invariant() const;
};

InvarianceReport invariance_demonstration(int trials = 200, std::uint64_t seed = 7);

std::string invariance_report_json(const InvarianceReport& r);
std::string invariance_report_text(const InvarianceReport& r);

}  // namespace fisher_moe
