// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/kernels.hpp"

#include <gtest/gtest.h>
#include <omp.h>

namespace fisher_moe {
namespace {

using kernels::Exec;

struct Fixture {
  GaussianMixtureSpec task;
  LabeledBatch batch;
  MoEModelState model;
};

Fixture make_fixture(int top_k, ExpertArch arch, int batch_size = 300) {
  Fixture f;
  Rng trng = make_stream(1, StreamPurpose::kTask);
  TaskShape shape;
  shape.n_clusters = 4;
  shape.input_dim = 6;
  f.task = make_gaussian_mixture(shape, trng);
  Rng drng = make_stream(1, StreamPurpose::kData);
  f.batch = sample_batch(f.task, batch_size, drng);
  Rng irng = make_stream(1, StreamPurpose::kInit);
  f.model = init_model(ModelShape{4, 6, 4, arch, 5}, ModelHyper{1.0, top_k, 0.05, 1.0}, irng);
  return f;
}

double max_abs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

TEST(Kernels, GradientMatchesReference) {
  for (int top_k : {0, 2}) {
    for (auto arch : {ExpertArch::kLinear, ExpertArch::kMlp}) {
      const auto f = make_fixture(top_k, arch);
      const auto ref = backward(f.model, f.batch);
      const auto serial = kernels::loss_and_gradient(f.model, f.batch, Exec::kSerial);
      const auto parallel = kernels::loss_and_gradient(f.model, f.batch, Exec::kParallel);
      EXPECT_NEAR(serial.loss.total, ref.loss.total, 1e-12);
      EXPECT_NEAR(parallel.loss.total, ref.loss.total, 1e-12);
      EXPECT_LT(max_abs(serial.grad.router, ref.grad.router), 1e-12);
      EXPECT_LT(max_abs(parallel.grad.router, ref.grad.router), 1e-12);
      for (std::size_t e = 0; e < ref.grad.experts.size(); ++e) {
        EXPECT_LT(max_abs(parallel.grad.experts[e].first, ref.grad.experts[e].first), 1e-12);
      }
    }
  }
}

TEST(Kernels, ParallelIsBitIdenticalAcrossThreadCounts) {
  const auto f = make_fixture(0, ExpertArch::kMlp, 1000);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = kernels::loss_and_gradient(f.model, f.batch, Exec::kParallel);
  const auto probs_one = kernels::routing_probs(f.model, f.batch.inputs, Exec::kParallel);
  omp_set_num_threads(4);
  const auto four = kernels::loss_and_gradient(f.model, f.batch, Exec::kParallel);
  const auto probs_four = kernels::routing_probs(f.model, f.batch.inputs, Exec::kParallel);
  omp_set_num_threads(saved);
  EXPECT_EQ(one.loss.total, four.loss.total);
  EXPECT_EQ(one.grad.router, four.grad.router);
  EXPECT_EQ(probs_one, probs_four);
}

TEST(Kernels, RoutingAndMeanAgree) {
  const auto f = make_fixture(0, ExpertArch::kLinear);
  const auto s = kernels::routing_probs(f.model, f.batch.inputs, Exec::kSerial);
  const auto p = kernels::routing_probs(f.model, f.batch.inputs, Exec::kParallel);
  EXPECT_LT(max_abs(s, p), 1e-15);
  const Eigen::VectorXd ms = kernels::mean_routing(f.model, f.batch.inputs, Exec::kSerial);
  const Eigen::VectorXd mp = kernels::mean_routing(f.model, f.batch.inputs, Exec::kParallel);
  EXPECT_LT((ms - mp).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((ms - marginal_routing(f.model, f.batch.inputs).values()).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(Kernels, EvaluateAgrees) {
  const auto f = make_fixture(2, ExpertArch::kLinear);
  const auto s = kernels::evaluate(f.model, f.batch, Exec::kSerial);
  const auto p = kernels::evaluate(f.model, f.batch, Exec::kParallel);
  EXPECT_NEAR(s.mean_loss, p.mean_loss, 1e-12);
  EXPECT_EQ(s.accuracy, p.accuracy);
  EXPECT_EQ(s.top1_counts, p.top1_counts);
  long total = 0;
  for (long c : s.top1_counts) total += c;
  EXPECT_EQ(total, f.batch.size());
}

TEST(Kernels, MeanSquaredScoreAgrees) {
  const auto f = make_fixture(0, ExpertArch::kMlp);
  for (int e = 0; e < f.model.n_experts(); ++e) {
    const Eigen::VectorXd s =
        kernels::mean_squared_score(f.model.experts[e], f.model.arch, f.batch, Exec::kSerial);
    const Eigen::VectorXd p =
        kernels::mean_squared_score(f.model.experts[e], f.model.arch, f.batch, Exec::kParallel);
    EXPECT_LT((s - p).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Kernels, RoutingTangentIsFirstOrder) {
  const auto f = make_fixture(0, ExpertArch::kLinear);
  Rng rng = make_stream(2, StreamPurpose::kData);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd delta(f.model.router.rows(), f.model.router.cols());
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = g(rng);
  const double h = 1e-6;
  const auto t = kernels::routing_tangent(f.model, f.batch.inputs, h * delta, Exec::kParallel);
  MoEModelState moved = f.model;
  moved.router += h * delta;
  const Eigen::VectorXd actual = kernels::mean_routing(moved, f.batch.inputs, Exec::kSerial) -
                                 kernels::mean_routing(f.model, f.batch.inputs, Exec::kSerial);
  EXPECT_LT((t.dp - actual).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_NEAR(t.dp.sum(), 0.0, 1e-15);

  double rms = 0.0;
  for (Eigen::Index i = 0; i < f.batch.size(); ++i) {
    rms += (h * delta * f.batch.inputs.row(i).transpose()).squaredNorm();
  }
  EXPECT_NEAR(t.rms_logit_step, std::sqrt(rms / f.batch.size()), 1e-15);
}

}  // namespace
}  // namespace fisher_moe
