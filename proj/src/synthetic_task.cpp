// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/synthetic_task.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fisher_moe {

std::string_view to_string(TaskLayout layout) {
  return layout == TaskLayout::kRing ? "ring" : "orthogonal";
}

TaskLayout parse_task_layout(std::string_view text) {
  if (text == "ring") return TaskLayout::kRing;
  if (text == "orthogonal") return TaskLayout::kOrthogonal;
  throw std::invalid_argument(fmt::format("unknown task layout '{}'", text));
}

LabeledBatch LabeledBatch::head(Eigen::Index count) const {
  const Eigen::Index n = std::min(count, size());
  LabeledBatch out;
  out.inputs = inputs.topRows(n);
  out.labels.assign(labels.begin(), labels.begin() + n);
  return out;
}

int GaussianMixtureSpec::n_classes() const {
  if (label_of_cluster.empty()) return 0;
  return *std::max_element(label_of_cluster.begin(), label_of_cluster.end()) + 1;
}

void GaussianMixtureSpec::validate() const {
  if (n_clusters < 2) throw std::invalid_argument("task needs at least two clusters");
  if (input_dim < 1) throw std::invalid_argument("task input_dim must be >= 1");
  if (static_cast<int>(means.size()) != n_clusters) {
    throw std::invalid_argument("task needs one mean per cluster");
  }
  for (const auto& m : means) {
    if (m.size() != input_dim) throw std::invalid_argument("cluster mean has wrong dimension");
    if (!m.allFinite()) throw std::invalid_argument("cluster mean is not finite");
  }
  if (!(covariance_scale > 0.0)) throw std::invalid_argument("covariance_scale must be > 0");
  if (mixture_weights.size() != n_clusters) {
    throw std::invalid_argument("mixture_weights must have one entry per cluster");
  }
  if (static_cast<int>(label_of_cluster.size()) != n_clusters) {
    throw std::invalid_argument("label_of_cluster must have one entry per cluster");
  }
  for (int label : label_of_cluster) {
    if (label < 0) throw std::invalid_argument("cluster labels must be non-negative");
  }
}

GaussianMixtureSpec make_gaussian_mixture(const TaskShape& shape, Rng& rng) {
  if (shape.n_clusters < 2) throw std::invalid_argument("task needs at least two clusters");
  if (shape.input_dim < 1) throw std::invalid_argument("task input_dim must be >= 1");
  if (!(shape.separation >= 0.0)) throw std::invalid_argument("separation must be >= 0");
  const int n_classes = shape.n_classes > 0 ? shape.n_classes : shape.n_clusters;
  if (n_classes < 2 || n_classes > shape.n_clusters) {
    throw std::invalid_argument(
        fmt::format("n_classes must be in [2, n_clusters], got {}", n_classes));
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd gauss(shape.input_dim, std::max(shape.n_clusters, shape.input_dim));
  for (Eigen::Index c = 0; c < gauss.cols(); ++c) {
    for (Eigen::Index r = 0; r < gauss.rows(); ++r) gauss(r, c) = normal(rng);
  }

  GaussianMixtureSpec spec;
  spec.n_clusters = shape.n_clusters;
  spec.input_dim = shape.input_dim;
  spec.covariance_scale = shape.covariance_scale;
  spec.mixture_weights = ProbabilityVector::uniform(shape.n_clusters);
  if (shape.layout == TaskLayout::kRing) {
    if (shape.input_dim < 2) throw std::invalid_argument("ring layout needs input_dim >= 2");
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss.leftCols(shape.input_dim));
    const Eigen::MatrixXd q = qr.householderQ();
    const double pi = std::acos(-1.0);
    const double radius = shape.separation / (2.0 * std::sin(pi / shape.n_clusters));
    for (int k = 0; k < shape.n_clusters; ++k) {
      const double angle = 2.0 * pi * k / shape.n_clusters;
      spec.means.push_back(radius * (std::cos(angle) * q.col(0) + std::sin(angle) * q.col(1)));
    }
  } else if (shape.n_clusters <= shape.input_dim) {
    const double radius = shape.separation / std::sqrt(2.0);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss.leftCols(shape.input_dim));
    const Eigen::MatrixXd q = qr.householderQ();
    for (int k = 0; k < shape.n_clusters; ++k) spec.means.push_back(radius * q.col(k));
  } else {
    const double radius = shape.separation / std::sqrt(2.0);
    for (int k = 0; k < shape.n_clusters; ++k) {
      const Eigen::VectorXd dir = gauss.col(k);
      spec.means.push_back(radius * dir / dir.norm());
    }
  }
  for (int k = 0; k < shape.n_clusters; ++k) spec.label_of_cluster.push_back(k % n_classes);
  spec.validate();
  return spec;
}

LabeledBatch sample_batch(const GaussianMixtureSpec& spec, int batch_size, Rng& rng,
                          std::vector<int>* clusters) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  const Eigen::VectorXd& w = spec.mixture_weights.values();
  std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
  std::normal_distribution<double> normal(0.0, 1.0);

  LabeledBatch batch;
  batch.inputs.resize(batch_size, spec.input_dim);
  batch.labels.resize(static_cast<std::size_t>(batch_size));
  if (clusters != nullptr) clusters->resize(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const int k = pick(rng);
    for (int j = 0; j < spec.input_dim; ++j) {
      batch.inputs(b, j) = spec.means[k][j] + spec.covariance_scale * normal(rng);
    }
    batch.labels[b] = spec.label_of_cluster[k];
    if (clusters != nullptr) (*clusters)[b] = k;
  }
  return batch;
}

LabeledBatch sample_batch(const GaussianMixtureSpec& spec, int batch_size, Rng& rng) {
  return sample_batch(spec, batch_size, rng, nullptr);
}

int bayes_predict(const GaussianMixtureSpec& spec,
                  const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const int n_classes = spec.n_classes();
  const double inv_two_var = 0.5 / (spec.covariance_scale * spec.covariance_scale);
  std::vector<double> log_joint(static_cast<std::size_t>(spec.n_clusters));
  for (int k = 0; k < spec.n_clusters; ++k) {
    const double wk = spec.mixture_weights[k];
    log_joint[k] = wk > 0.0 ? std::log(wk) - (x.transpose() - spec.means[k]).squaredNorm() * inv_two_var
                            : -std::numeric_limits<double>::infinity();
  }
  const double top = *std::max_element(log_joint.begin(), log_joint.end());
  std::vector<double> class_mass(static_cast<std::size_t>(n_classes), 0.0);
  for (int k = 0; k < spec.n_clusters; ++k) {
    class_mass[spec.label_of_cluster[k]] += std::exp(log_joint[k] - top);
  }
  // Ties go to the lowest class index.
  return static_cast<int>(std::max_element(class_mass.begin(), class_mass.end()) -
                          class_mass.begin());
}

AccuracyEstimate bayes_optimal_accuracy(const GaussianMixtureSpec& spec, int n_monte_carlo,
                                        Rng& rng) {
  if (n_monte_carlo < 10000) {
    throw std::invalid_argument("bayes_optimal_accuracy needs at least 1e4 Monte-Carlo samples");
  }
  spec.validate();
  constexpr int kChunk = 4096;
  long correct = 0;
  for (int done = 0; done < n_monte_carlo; done += kChunk) {
    const int count = std::min(kChunk, n_monte_carlo - done);
    const LabeledBatch batch = sample_batch(spec, count, rng);
    for (int b = 0; b < count; ++b) {
      if (bayes_predict(spec, batch.inputs.row(b)) == batch.labels[b]) ++correct;
    }
  }
  AccuracyEstimate est;
  est.accuracy = static_cast<double>(correct) / n_monte_carlo;
  est.std_error = std::sqrt(est.accuracy * (1.0 - est.accuracy) / n_monte_carlo);
  return est;
}

bool is_failure(double final_accuracy, double optimal_accuracy) {
  if (!(optimal_accuracy > 0.0 && optimal_accuracy <= 1.0)) {
    throw std::invalid_argument("optimal accuracy must be in (0, 1]");
  }
  if (!(final_accuracy >= 0.0 && final_accuracy <= 1.0)) {
    throw std::invalid_argument("final accuracy must be in [0, 1]");
  }
  return final_accuracy < kFailureAccuracyFraction * optimal_accuracy;
}

}  // namespace fisher_moe
