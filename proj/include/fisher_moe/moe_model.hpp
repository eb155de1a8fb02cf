// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small mixture-of-experts classifier with analytic gradients.
//
//   z = R x                      router logits (linear router)
//   p = softmax(z / tau)         routing distribution
//   g = TopK(p), renormalized    gates (g = p in dense mode)
//   o = sum_e g_e E_e(x)         mixed class logits
//   q = softmax(o)               class probabilities
//
// Experts are linear (E(x) = W x) or one-hidden-layer tanh networks
// (E(x) = B tanh(A x)). The training objective is mean cross-entropy plus the
// load-balancing term lambda * n * sum_i pbar_i f_i, where f_i (the top-1
// token fraction) is treated as a constant.

#pragma once

#include "fisher_moe/rng.hpp"
#include "fisher_moe/simplex.hpp"
#include "fisher_moe/synthetic_task.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fisher_moe {

enum class ExpertArch { kLinear, kMlp };
enum class OptimizerKind { kGd, kAdam };

std::string_view to_string(ExpertArch arch);
std::string_view to_string(OptimizerKind kind);
ExpertArch parse_expert_arch(std::string_view text);
OptimizerKind parse_optimizer(std::string_view text);

/// Raised by backward when the loss is not finite.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, double task_loss, double aux_loss, long step)
      : std::runtime_error(what), task_loss(task_loss), aux_loss(aux_loss), step(step) {}
  double task_loss;
  double aux_loss;
  long step;
};

/// Weights of one expert. For linear experts `second` is empty and `first` is
/// the n_classes x input_dim classifier; for MLP experts `first` is
/// hidden x input_dim and `second` is n_classes x hidden.
struct ExpertWeights {
  Eigen::MatrixXd first;
  Eigen::MatrixXd second;

  Eigen::Index param_count() const noexcept { return first.size() + second.size(); }
  /// Row-major flattening: all of `first`, then all of `second`.
  Eigen::VectorXd flatten() const;
  bool operator==(const ExpertWeights& o) const;
};

struct ModelShape {
  int n_experts = 4;
  int input_dim = 8;
  int n_classes = 4;
  ExpertArch arch = ExpertArch::kLinear;
  int hidden = 0;  // MLP experts only
};

struct ModelHyper {
  double tau = 1.0;
  int top_k = 0;  // 0 selects dense routing
  double lambda = 0.0;
  double init_scale = 1.0;  // router init standard deviation is init_scale / sqrt(input_dim)
};

struct MoEModelState {
  Eigen::MatrixXd router;  // n_experts x input_dim
  std::vector<ExpertWeights> experts;
  ExpertArch arch = ExpertArch::kLinear;
  double tau = 1.0;
  int top_k = 0;
  double lambda = 0.0;
  long step = 0;

  int n_experts() const noexcept { return static_cast<int>(router.rows()); }
  int input_dim() const noexcept { return static_cast<int>(router.cols()); }
  int n_classes() const;
  int hidden() const;
  bool dense() const noexcept { return top_k == 0 || top_k >= n_experts(); }
  Eigen::Index expert_param_count() const;

  /// Throws std::invalid_argument on a broken invariant.
  void validate() const;
  bool operator==(const MoEModelState& o) const;
};

/// Router ~ N(0, init_scale^2 / input_dim); experts use fan-based uniform
/// (Xavier) initialization.
MoEModelState init_model(const ModelShape& shape, const ModelHyper& hyper, Rng& rng);

/// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Eigen::MatrixXd xavier_uniform(Eigen::Index fan_out, Eigen::Index fan_in, Rng& rng);

ExpertWeights init_expert(const ModelShape& shape, Rng& rng);

/// Class logits of one expert; `hidden_out` receives tanh activations for MLP
/// experts when non-null.
Eigen::VectorXd expert_logits(const ExpertWeights& w, ExpertArch arch,
                              const Eigen::Ref<const Eigen::VectorXd>& x,
                              Eigen::VectorXd* hidden_out = nullptr);

/// Gradient of log softmax(E(x))_y with respect to the expert's flattened
/// parameters (router bypassed).
Eigen::VectorXd expert_score(const ExpertWeights& w, ExpertArch arch,
                             const Eigen::Ref<const Eigen::VectorXd>& x, int y);

/// Expert's own class distribution softmax(E(x)).
Eigen::VectorXd expert_class_probs(const ExpertWeights& w, ExpertArch arch,
                                   const Eigen::Ref<const Eigen::VectorXd>& x);

struct GateOutput {
  ProbabilityVector routing_probs;  // pre-top-k softmax
  Eigen::VectorXd gates;            // post-top-k, renormalized
  std::vector<int> selected;        // ascending expert index
};

/// Gates from routing probabilities: dense copies p, top-k keeps the k
/// largest (ties to the lower index) and renormalizes.
Eigen::VectorXd gates_from_probs(const Eigen::Ref<const Eigen::VectorXd>& p, int top_k,
                                 std::vector<int>* selected = nullptr);

struct ForwardOutput {
  Eigen::MatrixXd class_probs;  // B x n_classes
  std::vector<GateOutput> gates;
};

ForwardOutput forward(const MoEModelState& model, const LabeledBatch& batch);

struct LossBreakdown {
  double task_loss = 0.0;
  double aux_loss = 0.0;
  double total = 0.0;
  double router_grad_norm = 0.0;
};

/// lambda * n * sum_i pbar_i f_i, with pbar the batch-mean routing
/// probabilities (rows of routing_probs) and f the top-1 fractions.
double aux_loss(const Eigen::Ref<const Eigen::MatrixXd>& routing_probs,
                const std::vector<int>& top1_assignments, double lambda, int n);

struct ModelGradient {
  Eigen::MatrixXd router;
  std::vector<ExpertWeights> experts;

  static ModelGradient zeros_like(const MoEModelState& model);
  ModelGradient& operator+=(const ModelGradient& o);
  double squared_norm() const;
};

struct BackwardResult {
  ModelGradient grad;
  LossBreakdown loss;
};

/// Exact gradients of task + auxiliary loss. Throws NonFiniteLossError.
BackwardResult backward(const MoEModelState& model, const LabeledBatch& batch);

struct AdamState {
  ModelGradient m;
  ModelGradient v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
};

/// Applies one optimizer update in place and increments the step counter.
/// Plain gradient descent unless `adam` is non-null.
LossBreakdown train_step_inplace(MoEModelState& model, const LabeledBatch& batch, double eta,
                                 AdamState* adam = nullptr);

struct TrainStepResult {
  MoEModelState model;
  LossBreakdown loss;
};

/// Gradient-descent step returning the updated model by value.
TrainStepResult train_step(const MoEModelState& model, const LabeledBatch& batch, double eta);

/// Mean dense routing distribution softmax(R x / tau) over the samples.
ProbabilityVector marginal_routing(const MoEModelState& model, const LabeledBatch& sample);
ProbabilityVector marginal_routing(const MoEModelState& model, const SampleMatrix& inputs);

/// Resamples every expert with Xavier initialization, keeps the router
/// bit-identical and the step counter; halves lambda when requested.
MoEModelState reinit_experts_keep_router(const MoEModelState& model, Rng& rng, bool halve_lambda);

/// Resamples router and experts exactly as init_model would.
MoEModelState reinit_all(const MoEModelState& model, double init_scale, Rng& rng);

}  // namespace fisher_moe
