// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/fisher.hpp"

#include "fisher_moe/kernels.hpp"

#include <fmt/format.h>

#include <cmath>

namespace fisher_moe {

namespace {

void check_expert(const MoEModelState& model, int expert_id) {
  if (expert_id < 0 || expert_id >= model.n_experts()) {
    throw FisherError(fmt::format("expert id {} out of range [0, {})", expert_id,
                                  model.n_experts()));
  }
}

HeterogeneityMatrix finish(Eigen::MatrixXd mean_fim, bool diagonal_only) {
  HeterogeneityMatrix h;
  h.diagonal_only = diagonal_only;
  h.mean_fim_diag = diagonal_only ? Eigen::VectorXd(mean_fim.col(0)) : mean_fim.diagonal();
  h.mean_fim_trace = h.mean_fim_diag.sum();
  if (!(h.mean_fim_trace > 0.0)) {
    throw FisherError("heterogeneity_matrix: degenerate Fisher mass (zero trace)");
  }
  h.entries = mean_fim - mean_fim.cwiseAbs2() / h.mean_fim_trace;
  h.frob_norm = h.entries.norm();
  return h;
}

void check_weights(std::size_t count, const ProbabilityVector& p_bar) {
  if (count == 0) throw FisherError("heterogeneity_matrix: no expert Fisher matrices");
  if (static_cast<Eigen::Index>(count) != p_bar.size()) {
    throw FisherError(fmt::format("heterogeneity_matrix: {} Fisher matrices for {} experts",
                                  count, p_bar.size()));
  }
}

}  // namespace

DiagonalFIM estimate_diagonal_fim(const MoEModelState& model, int expert_id,
                                  const LabeledBatch& batch) {
  check_expert(model, expert_id);
  if (batch.size() == 0) throw FisherError("estimate_diagonal_fim: empty batch");
  if (batch.input_dim() != model.input_dim()) {
    throw FisherError("estimate_diagonal_fim: input_dim does not match model");
  }
  DiagonalFIM out;
  out.expert_id = expert_id;
  out.diag = kernels::mean_squared_score(model.experts[expert_id], model.arch, batch,
                                         kernels::Exec::kParallel);
  out.batch_size_used = batch.size();
  return out;
}

std::vector<int> sample_expert_labels(const MoEModelState& model, int expert_id,
                                      const SampleMatrix& inputs, Rng& rng) {
  check_expert(model, expert_id);
  std::vector<int> labels(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index b = 0; b < inputs.rows(); ++b) {
    const Eigen::VectorXd q =
        expert_class_probs(model.experts[expert_id], model.arch, inputs.row(b).transpose());
    std::discrete_distribution<int> pick(q.data(), q.data() + q.size());
    labels[b] = pick(rng);
  }
  return labels;
}

Eigen::MatrixXd exact_fim_oracle(const MoEModelState& model, int expert_id,
                                 const SampleMatrix& inputs) {
  check_expert(model, expert_id);
  const Eigen::Index d = model.expert_param_count();
  if (d > kExactFimMaxParams) {
    throw FisherError(fmt::format("exact_fim_oracle: {} parameters exceeds the limit of {}", d,
                                  kExactFimMaxParams));
  }
  if (inputs.rows() == 0) throw FisherError("exact_fim_oracle: no inputs");
  const ExpertWeights& w = model.experts[expert_id];
  Eigen::MatrixXd fim = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index b = 0; b < inputs.rows(); ++b) {
    const Eigen::VectorXd x = inputs.row(b).transpose();
    const Eigen::VectorXd q = expert_class_probs(w, model.arch, x);
    for (int y = 0; y < q.size(); ++y) {
      const Eigen::VectorXd s = expert_score(w, model.arch, x, y);
      fim.selfadjointView<Eigen::Lower>().rankUpdate(s, q[y]);
    }
  }
  fim = fim.selfadjointView<Eigen::Lower>();
  return fim / static_cast<double>(inputs.rows());
}

Eigen::MatrixXd HeterogeneityMatrix::dense() const {
  if (!diagonal_only) return entries;
  return entries.col(0).asDiagonal();
}

HeterogeneityMatrix heterogeneity_matrix(std::span<const DiagonalFIM> fims,
                                         const ProbabilityVector& p_bar) {
  check_weights(fims.size(), p_bar);
  const Eigen::Index d = fims.front().diag.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (std::size_t e = 0; e < fims.size(); ++e) {
    if (fims[e].diag.size() != d) {
      throw FisherError("heterogeneity_matrix: experts disagree on the parameter count");
    }
    mean += p_bar[static_cast<Eigen::Index>(e)] * fims[e].diag;
  }
  return finish(mean, true);
}

HeterogeneityMatrix heterogeneity_matrix(std::span<const Eigen::MatrixXd> fims,
                                         const ProbabilityVector& p_bar) {
  check_weights(fims.size(), p_bar);
  const Eigen::Index d = fims.front().rows();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t e = 0; e < fims.size(); ++e) {
    if (fims[e].rows() != d || fims[e].cols() != d) {
      throw FisherError("heterogeneity_matrix: experts disagree on the Fisher shape");
    }
    mean += p_bar[static_cast<Eigen::Index>(e)] * fims[e];
  }
  return finish(mean, false);
}

FHSValue fhs(double h_frob_now, double h_frob_initial) {
  FHSValue v;
  v.h_frob_now = h_frob_now;
  v.h_frob_initial = h_frob_initial;
  v.value = h_frob_now / (h_frob_initial + v.epsilon);
  return v;
}

FHSValue fhs(const HeterogeneityMatrix& current, const HeterogeneityMatrix& initial) {
  if (current.entries.rows() != initial.entries.rows()) {
    throw FisherError("fhs: heterogeneity matrices come from different architectures");
  }
  return fhs(current.frob_norm, initial.frob_norm);
}

double specialization_rate_bound(double eta, const Eigen::Ref<const Eigen::VectorXd>& gradient,
                                 const Eigen::Ref<const Eigen::VectorXd>& mean_fim_diag,
                                 double h_frob) {
  if (gradient.size() != mean_fim_diag.size()) {
    throw FisherError("specialization_rate_bound: gradient and Fisher diagonal sizes differ");
  }
  if ((mean_fim_diag.array() <= 0.0).any()) {
    throw FisherError("specialization_rate_bound: Fisher diagonal must be strictly positive");
  }
  const double natural_norm = std::sqrt((gradient.array().square() / mean_fim_diag.array()).sum());
  return eta * natural_norm / std::sqrt(1.0 + h_frob / mean_fim_diag.sum());
}

double fhs_failure_probability_bound(double fhs_value, int n, int d, double op_norm_bound) {
  if (!(fhs_value > 1.0)) throw FisherError("bound applies only above threshold (FHS > 1)");
  if (!(op_norm_bound > 0.0)) throw FisherError("operator-norm bound M must be > 0");
  if (n < 1 || d < 1) throw FisherError("n and d must be positive");
  const double excess = fhs_value - 1.0;
  const double delta = 2.0 * d *
                       std::exp(-static_cast<double>(n) * excess * excess /
                                (32.0 * op_norm_bound * op_norm_bound));
  return std::min(1.0, delta);
}

}  // namespace fisher_moe
