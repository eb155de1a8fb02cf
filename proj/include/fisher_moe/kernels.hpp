// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Batch kernels: every reduction over samples lives here, in two flavours.
//
// kSerial is the reference: one loop, samples accumulated in order.
// kParallel splits the batch into fixed chunks of kChunkSize samples, reduces
// each chunk with OpenMP and folds the partials in chunk order. The partition
// does not depend on the thread count, so parallel results are bit-identical
// across thread counts; they agree with the serial reference to rounding.

#pragma once

#include "fisher_moe/moe_model.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fisher_moe::kernels {

enum class Exec { kSerial, kParallel };

inline constexpr Eigen::Index kChunkSize = 64;

/// Loss and exact gradient of the full objective (see backward()).
BackwardResult loss_and_gradient(const MoEModelState& model, const LabeledBatch& batch,
                                 Exec exec);

/// Routing probabilities, one row per sample (B x n_experts).
Eigen::MatrixXd routing_probs(const MoEModelState& model, const SampleMatrix& inputs, Exec exec);

/// Mean of the dense routing probabilities over the samples.
Eigen::VectorXd mean_routing(const MoEModelState& model, const SampleMatrix& inputs, Exec exec);

/// First-order change of the mean routing distribution under a router
/// displacement: mean_x J(x) (delta_router x), plus the RMS logit
/// displacement sqrt(mean_x |delta_router x|^2).
struct RoutingTangent {
  Eigen::VectorXd dp;
  double rms_logit_step = 0.0;
};
RoutingTangent routing_tangent(const MoEModelState& model, const SampleMatrix& inputs,
                               const Eigen::MatrixXd& delta_router, Exec exec);

struct Evaluation {
  double mean_loss = 0.0;  // mean cross-entropy, nats
  double accuracy = 0.0;
  std::vector<long> top1_counts;  // per expert, argmax of routing probs
};

Evaluation evaluate(const MoEModelState& model, const LabeledBatch& batch, Exec exec);

/// Mean elementwise-squared expert score over the batch (observed labels):
/// the diagonal empirical Fisher of one expert.
Eigen::VectorXd mean_squared_score(const ExpertWeights& expert, ExpertArch arch,
                                   const LabeledBatch& batch, Exec exec);

}  // namespace fisher_moe::kernels
