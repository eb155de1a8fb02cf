// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Expert Fisher information: the diagonal empirical estimator used for
// monitoring, an exact (expected) Fisher oracle for tiny experts, the
// routing-weighted heterogeneity matrix and the heterogeneity score.
//
// Scores are taken with respect to one expert's own class distribution,
// softmax(E_e(x)), with the router bypassed.

#pragma once

#include "fisher_moe/moe_model.hpp"
#include "fisher_moe/simplex.hpp"

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <vector>

namespace fisher_moe {

class FisherError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DiagonalFIM {
  int expert_id = 0;
  Eigen::VectorXd diag;  // one entry per expert parameter, all >= 0
  Eigen::Index batch_size_used = 0;
};

/// Mean over the batch of the squared score at the observed label.
DiagonalFIM estimate_diagonal_fim(const MoEModelState& model, int expert_id,
                                  const LabeledBatch& batch);

/// Labels drawn from expert_id's own predictive distribution at each input.
std::vector<int> sample_expert_labels(const MoEModelState& model, int expert_id,
                                      const SampleMatrix& inputs, Rng& rng);

inline constexpr Eigen::Index kExactFimMaxParams = 500;

/// E_x sum_y q(y|x) s_y s_y^T by enumeration over classes. Needs at most
/// kExactFimMaxParams expert parameters.
Eigen::MatrixXd exact_fim_oracle(const MoEModelState& model, int expert_id,
                                 const SampleMatrix& inputs);

/// Routing-weighted heterogeneity matrix
///   H_jk = Fbar_jk - Fbar_jk^2 / tr(Fbar),   Fbar = sum_e pbar_e F_e.
/// With diagonal inputs only the diagonal is stored.
struct HeterogeneityMatrix {
  Eigen::MatrixXd entries;  // d x d, or d x 1 holding the diagonal
  bool diagonal_only = false;
  double frob_norm = 0.0;
  Eigen::VectorXd mean_fim_diag;  // diagonal of Fbar
  double mean_fim_trace = 0.0;

  Eigen::MatrixXd dense() const;
};

HeterogeneityMatrix heterogeneity_matrix(std::span<const DiagonalFIM> fims,
                                         const ProbabilityVector& p_bar);

/// Same formula for full expert Fisher matrices.
HeterogeneityMatrix heterogeneity_matrix(std::span<const Eigen::MatrixXd> fims,
                                         const ProbabilityVector& p_bar);

inline constexpr double kFhsEpsilon = 1e-8;

struct FHSValue {
  double value = 0.0;
  double h_frob_now = 0.0;
  double h_frob_initial = 0.0;
  double epsilon = kFhsEpsilon;
};

/// |H_now|_F / (|H_initial|_F + 1e-8).
FHSValue fhs(const HeterogeneityMatrix& current, const HeterogeneityMatrix& initial);
FHSValue fhs(double h_frob_now, double h_frob_initial);

/// eta * |g|_{Fbar^-1} / sqrt(1 + |H|_F / tr(Fbar)) with a diagonal Fbar.
double specialization_rate_bound(double eta, const Eigen::Ref<const Eigen::VectorXd>& gradient,
                                 const Eigen::Ref<const Eigen::VectorXd>& mean_fim_diag,
                                 double h_frob);

/// min(1, 2 d exp(-n (FHS - 1)^2 / (32 M^2))); only defined for FHS > 1.
double fhs_failure_probability_bound(double fhs_value, int n, int d, double op_norm_bound);

}  // namespace fisher_moe
