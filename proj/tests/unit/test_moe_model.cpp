// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/moe_model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

namespace fisher_moe {
namespace {

GaussianMixtureSpec small_task(int clusters, int dim, std::uint64_t seed) {
  Rng rng = make_stream(seed, StreamPurpose::kTask);
  TaskShape shape;
  shape.n_clusters = clusters;
  shape.input_dim = dim;
  shape.separation = 3.0;
  return make_gaussian_mixture(shape, rng);
}

MoEModelState small_model(int experts, int dim, int classes, ExpertArch arch, int top_k,
                          double lambda, std::uint64_t seed) {
  Rng rng = make_stream(seed, StreamPurpose::kInit);
  ModelShape shape{experts, dim, classes, arch, arch == ExpertArch::kMlp ? 5 : 0};
  ModelHyper hyper{0.8, top_k, lambda, 1.5};
  return init_model(shape, hyper, rng);
}

// Visits every scalar parameter of a model (or gradient with the same layout).
void for_each_param(MoEModelState& m, const std::function<void(double&)>& f) {
  for (Eigen::Index i = 0; i < m.router.size(); ++i) f(m.router.data()[i]);
  for (auto& e : m.experts) {
    for (Eigen::Index i = 0; i < e.first.size(); ++i) f(e.first.data()[i]);
    for (Eigen::Index i = 0; i < e.second.size(); ++i) f(e.second.data()[i]);
  }
}

std::vector<double> flatten_gradient(const ModelGradient& g) {
  std::vector<double> out(g.router.data(), g.router.data() + g.router.size());
  for (const auto& e : g.experts) {
    out.insert(out.end(), e.first.data(), e.first.data() + e.first.size());
    out.insert(out.end(), e.second.data(), e.second.data() + e.second.size());
  }
  return out;
}

std::vector<int> top_sets(const MoEModelState& m, const LabeledBatch& b) {
  std::vector<int> out;
  for (const auto& g : forward(m, b).gates) {
    out.insert(out.end(), g.selected.begin(), g.selected.end());
    const auto& p = g.routing_probs.values();
    out.push_back(static_cast<int>(std::max_element(p.data(), p.data() + p.size()) - p.data()));
  }
  return out;
}

// Central differences of the total loss; parameters whose perturbation
// changes a top-k selection or a top-1 assignment are skipped.
double max_relative_gradient_error(const MoEModelState& model, const LabeledBatch& batch,
                                   int* checked) {
  const std::vector<double> analytic = flatten_gradient(backward(model, batch).grad);
  const std::vector<int> base_sets = top_sets(model, batch);
  const double h = 1e-6;
  MoEModelState work = model;
  std::size_t index = 0;
  double worst = 0.0;
  *checked = 0;
  for_each_param(work, [&](double& v) {
    const double saved = v;
    v = saved + h;
    const bool stable_plus = top_sets(work, batch) == base_sets;
    const double plus = backward(work, batch).loss.total;
    v = saved - h;
    const bool stable_minus = top_sets(work, batch) == base_sets;
    const double minus = backward(work, batch).loss.total;
    v = saved;
    if (stable_plus && stable_minus) {
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[index];
      const double denom = std::max({std::abs(numeric), std::abs(a), 1e-4});
      worst = std::max(worst, std::abs(numeric - a) / denom);
      ++*checked;
    }
    ++index;
  });
  return worst;
}

TEST(Gradient, FiniteDifferencesDenseLinear) {
  const auto task = small_task(4, 3, 1);
  Rng rng = make_stream(1, StreamPurpose::kData);
  const auto batch = sample_batch(task, 16, rng);
  const auto model = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.1, 1);
  int checked = 0;
  EXPECT_LT(max_relative_gradient_error(model, batch, &checked), 1e-5);
  EXPECT_EQ(checked, 4 * 3 + 4 * 4 * 3);
}

TEST(Gradient, FiniteDifferencesDenseMlp) {
  const auto task = small_task(4, 3, 2);
  Rng rng = make_stream(2, StreamPurpose::kData);
  const auto batch = sample_batch(task, 16, rng);
  const auto model = small_model(4, 3, 4, ExpertArch::kMlp, 0, 0.05, 2);
  int checked = 0;
  EXPECT_LT(max_relative_gradient_error(model, batch, &checked), 1e-5);
  EXPECT_GT(checked, 0);
}

TEST(Gradient, FiniteDifferencesTopK) {
  const auto task = small_task(4, 3, 3);
  Rng rng = make_stream(3, StreamPurpose::kData);
  const auto batch = sample_batch(task, 16, rng);
  for (auto arch : {ExpertArch::kLinear, ExpertArch::kMlp}) {
    const auto model = small_model(4, 3, 4, arch, 2, 0.1, 3);
    int checked = 0;
    EXPECT_LT(max_relative_gradient_error(model, batch, &checked), 1e-5);
    EXPECT_GT(checked, 0);
  }
}

TEST(Gradient, AuxTermOnlyTouchesRouter) {
  const auto task = small_task(4, 3, 4);
  Rng rng = make_stream(4, StreamPurpose::kData);
  const auto batch = sample_batch(task, 32, rng);
  auto a = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.0, 4);
  auto b = a;
  b.lambda = 0.3;
  const auto ga = backward(a, batch).grad;
  const auto gb = backward(b, batch).grad;
  for (std::size_t e = 0; e < ga.experts.size(); ++e) {
    EXPECT_EQ(ga.experts[e].first, gb.experts[e].first);
  }
  EXPECT_GT((ga.router - gb.router).norm(), 0.0);
}

TEST(Gradient, SymmetricModelOnRandomLabels) {
  // Zero router and identical zero experts: the expected gradient vanishes
  // when labels carry no information.
  const int dim = 3;
  MoEModelState m = small_model(2, dim, 2, ExpertArch::kLinear, 0, 0.0, 5);
  m.router.setZero();
  for (auto& e : m.experts) e.first.setZero();
  Rng rng = make_stream(5, StreamPurpose::kData);
  LabeledBatch batch;
  batch.inputs = SampleMatrix(20000, dim);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < batch.inputs.size(); ++i) batch.inputs.data()[i] = g(rng);
  for (int i = 0; i < 20000; ++i) batch.labels.push_back(coin(rng) ? 1 : 0);
  const double norm = std::sqrt(backward(m, batch).grad.squared_norm());
  EXPECT_LT(norm, 0.05);
}

TEST(Forward, SingleExpertMatchesExpert) {
  const auto task = small_task(3, 4, 6);
  Rng rng = make_stream(6, StreamPurpose::kData);
  const auto batch = sample_batch(task, 8, rng);
  const auto m = small_model(1, 4, 3, ExpertArch::kLinear, 0, 0.0, 6);
  const auto out = forward(m, batch);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    EXPECT_DOUBLE_EQ(out.gates[i].gates[0], 1.0);
    const Eigen::VectorXd x = batch.inputs.row(i).transpose();
    const Eigen::VectorXd q = expert_class_probs(m.experts[0], m.arch, x);
    EXPECT_LT((out.class_probs.row(i).transpose() - q).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Forward, IdenticalExpertsIgnoreRouting) {
  const auto task = small_task(3, 4, 7);
  Rng rng = make_stream(7, StreamPurpose::kData);
  const auto batch = sample_batch(task, 8, rng);
  auto a = small_model(3, 4, 3, ExpertArch::kMlp, 0, 0.0, 7);
  for (auto& e : a.experts) e = a.experts[0];
  auto b = a;
  b.router *= -3.0;
  EXPECT_LT((forward(a, batch).class_probs - forward(b, batch).class_probs).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(Forward, TopKEqualToExpertCountIsDense) {
  const auto task = small_task(4, 3, 8);
  Rng rng = make_stream(8, StreamPurpose::kData);
  const auto batch = sample_batch(task, 8, rng);
  auto dense = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.0, 8);
  auto full = dense;
  full.top_k = 4;
  EXPECT_LT(
      (forward(dense, batch).class_probs - forward(full, batch).class_probs).cwiseAbs().maxCoeff(),
      1e-12);
}

TEST(Gates, TopKTiesGoToLowerIndex) {
  std::vector<int> selected;
  const Eigen::VectorXd g = gates_from_probs(Eigen::Vector4d(0.3, 0.2, 0.3, 0.2), 2, &selected);
  EXPECT_EQ(selected, (std::vector<int>{0, 2}));
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.0);
}

TEST(AuxLoss, Examples) {
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(4, 4, 0.25);
  EXPECT_EQ(aux_loss(uniform, {0, 1, 2, 3}, 0.0, 4), 0.0);
  EXPECT_NEAR(aux_loss(uniform, {0, 1, 2, 3}, 0.3, 4), 0.3, 1e-15);
  // Three experts, all traffic to expert 0: lambda * 3 * pbar_0 * 1.
  Eigen::MatrixXd probs(2, 3);
  probs << 0.6, 0.3, 0.1, 0.8, 0.1, 0.1;
  EXPECT_NEAR(aux_loss(probs, {0, 0}, 0.5, 3), 0.5 * 3 * 0.7, 1e-15);
  EXPECT_GT(aux_loss(probs, {0, 0}, 0.5, 3), 0.5);
  EXPECT_THROW(aux_loss(probs, {0}, 0.5, 3), std::invalid_argument);
}

TEST(TrainStep, ZeroLearningRateIsIdentity) {
  const auto task = small_task(4, 3, 9);
  Rng rng = make_stream(9, StreamPurpose::kData);
  const auto batch = sample_batch(task, 16, rng);
  const auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.1, 9);
  const auto r = train_step(m, batch, 0.0);
  EXPECT_EQ(r.model.router, m.router);
  for (std::size_t e = 0; e < m.experts.size(); ++e) EXPECT_EQ(r.model.experts[e], m.experts[e]);
  EXPECT_EQ(r.model.step, m.step + 1);
}

TEST(TrainStep, DeterministicAndDescends) {
  const auto task = small_task(4, 3, 10);
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng = make_stream(seed, StreamPurpose::kData);
    const auto batch = sample_batch(task, 256, rng);
    const auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.0, seed);
    const auto a = train_step(m, batch, 1e-3);
    const auto b = train_step(m, batch, 1e-3);
    EXPECT_TRUE(a.model == b.model);
    const double before = backward(m, batch).loss.total;
    const double after = backward(a.model, batch).loss.total;
    decreased += after < before ? 1 : 0;
  }
  EXPECT_EQ(decreased, 10);
}

TEST(TrainStep, AdamUpdatesAndCounts) {
  const auto task = small_task(4, 3, 11);
  Rng rng = make_stream(11, StreamPurpose::kData);
  const auto batch = sample_batch(task, 32, rng);
  auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.0, 11);
  AdamState adam;
  adam.m = ModelGradient::zeros_like(m);
  adam.v = ModelGradient::zeros_like(m);
  const auto before = m.router;
  train_step_inplace(m, batch, 1e-2, &adam);
  EXPECT_EQ(adam.t, 1);
  EXPECT_GT((m.router - before).norm(), 0.0);
}

TEST(TrainStep, NonFiniteLossThrows) {
  const auto task = small_task(4, 3, 12);
  Rng rng = make_stream(12, StreamPurpose::kData);
  const auto batch = sample_batch(task, 8, rng);
  auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.0, 12);
  m.experts[0].first(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(backward(m, batch), NonFiniteLossError);
}

TEST(MarginalRouting, Examples) {
  auto m = small_model(3, 2, 2, ExpertArch::kLinear, 0, 0.0, 13);
  m.router.setZero();
  SampleMatrix x(2, 2);
  x << 1.0, 0.0, 0.0, 1.0;
  const auto u = marginal_routing(m, x);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(u[i], 1.0 / 3.0);

  m.router << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
  const auto single = marginal_routing(m, SampleMatrix(x.topRows(1)));
  const auto direct = softmax(m.router * Eigen::Vector2d(1.0, 0.0), m.tau);
  EXPECT_LT((single.values() - direct.values()).cwiseAbs().maxCoeff(), 1e-15);

  auto two = small_model(2, 1, 2, ExpertArch::kLinear, 0, 0.0, 14);
  two.tau = 1.0;
  two.router << 1.0, 0.0;
  SampleMatrix y(2, 1);
  y << 1.0, -1.0;
  const auto mean = marginal_routing(two, y);
  const double s = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(mean[0], 0.5 * (s + (1.0 - s)), 1e-15);
}

TEST(Reinit, KeepsRouterAndHalvesLambda) {
  auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.1, 15);
  m.step = 77;
  Rng a = make_stream(15, StreamPurpose::kIntervention);
  Rng b = make_stream(15, StreamPurpose::kIntervention);
  const auto x = reinit_experts_keep_router(m, a, true);
  const auto y = reinit_experts_keep_router(m, b, false);
  EXPECT_EQ(x.router, m.router);
  EXPECT_DOUBLE_EQ(x.lambda, 0.05);
  EXPECT_DOUBLE_EQ(y.lambda, 0.1);
  EXPECT_EQ(x.step, 77);
  for (std::size_t e = 0; e < m.experts.size(); ++e) {
    EXPECT_EQ(x.experts[e], y.experts[e]);
    EXPECT_FALSE(x.experts[e] == m.experts[e]);
  }
}

TEST(Reinit, FullReinitChangesRouter) {
  const auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.1, 16);
  Rng rng = make_stream(16, StreamPurpose::kIntervention);
  const auto r = reinit_all(m, 1.0, rng);
  EXPECT_GT((r.router - m.router).norm(), 0.0);
}

TEST(Xavier, WithinBounds) {
  Rng rng = make_stream(17, StreamPurpose::kInit);
  const Eigen::MatrixXd w = xavier_uniform(20, 30, rng);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 50.0));
}

TEST(ModelState, ValidateRejectsBrokenShapes) {
  auto m = small_model(4, 3, 4, ExpertArch::kLinear, 0, 0.1, 18);
  EXPECT_NO_THROW(m.validate());
  m.experts.pop_back();
  EXPECT_THROW(m.validate(), std::invalid_argument);
  EXPECT_EQ(parse_expert_arch("mlp"), ExpertArch::kMlp);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::kAdam);
  EXPECT_THROW(parse_optimizer("sgd2"), std::invalid_argument);
}

}  // namespace
}  // namespace fisher_moe
