// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Isotropic mixture-of-Gaussians classification tasks and their exact Bayes
// classifier, which supplies the "optimal accuracy" used to label failures.

#pragma once

#include "fisher_moe/rng.hpp"
#include "fisher_moe/simplex.hpp"

#include <Eigen/Dense>

#include <string_view>
#include <vector>

namespace fisher_moe {

/// Samples are stored one per row so a sample is a contiguous span.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledBatch {
  SampleMatrix inputs;  // B x input_dim
  std::vector<int> labels;

  Eigen::Index size() const noexcept { return inputs.rows(); }
  Eigen::Index input_dim() const noexcept { return inputs.cols(); }

  /// The first `count` samples (clamped to the batch size).
  LabeledBatch head(Eigen::Index count) const;
};

struct GaussianMixtureSpec {
  int n_clusters = 0;
  int input_dim = 0;
  std::vector<Eigen::VectorXd> means;
  double covariance_scale = 1.0;  // isotropic standard deviation
  ProbabilityVector mixture_weights = ProbabilityVector::uniform(1);
  std::vector<int> label_of_cluster;

  int n_classes() const;

  /// Throws std::invalid_argument when any field is inconsistent.
  void validate() const;
};

enum class TaskLayout {
  kOrthogonal,  // one mean per orthonormal direction
  kRing,        // means evenly spaced on a circle in a random plane
};

std::string_view to_string(TaskLayout layout);
TaskLayout parse_task_layout(std::string_view text);

/// Knobs for the generated default task.
struct TaskShape {
  TaskLayout layout = TaskLayout::kOrthogonal;
  int n_clusters = 4;
  int input_dim = 8;
  int n_classes = 0;  // 0 means one class per cluster
  double separation = 4.0;  // pairwise distance between cluster means
  double covariance_scale = 1.0;
};

/// Orthogonal layout: cluster means along random orthonormal directions
/// (random unit directions when n_clusters > input_dim), scaled so any two
/// means sit `separation` apart.
/// Ring layout: means at angles 2 pi k / n_clusters on a circle in a random
/// plane, with neighbouring means `separation` apart; needs input_dim >= 2.
/// Both: equal weights, cluster k carries label k mod n_classes.
GaussianMixtureSpec make_gaussian_mixture(const TaskShape& shape, Rng& rng);

/// Draws a cluster from the mixture weights, then an isotropic Gaussian
/// sample around its mean.
LabeledBatch sample_batch(const GaussianMixtureSpec& spec, int batch_size, Rng& rng);

/// Same as sample_batch but also reports the generating cluster per sample.
LabeledBatch sample_batch(const GaussianMixtureSpec& spec, int batch_size, Rng& rng,
                          std::vector<int>* clusters);

/// Class predicted by the exact posterior: argmax over classes of the summed
/// weight * density of the clusters carrying that class.
int bayes_predict(const GaussianMixtureSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& x);

struct AccuracyEstimate {
  double accuracy = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo accuracy of the Bayes classifier; needs n_monte_carlo >= 1e4.
AccuracyEstimate bayes_optimal_accuracy(const GaussianMixtureSpec& spec, int n_monte_carlo,
                                        Rng& rng);

/// Failure means final accuracy below 85% of the Bayes-optimal accuracy.
bool is_failure(double final_accuracy, double optimal_accuracy);

inline constexpr double kFailureAccuracyFraction = 0.85;

}  // namespace fisher_moe
