// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/baselines.hpp"
#include "fisher_moe/fisher.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace fisher_moe {
namespace {

MoEModelState linear_model(int experts, int dim, int classes, std::uint64_t seed) {
  Rng rng = make_stream(seed, StreamPurpose::kInit);
  return init_model(ModelShape{experts, dim, classes, ExpertArch::kLinear, 0},
                    ModelHyper{1.0, 0, 0.0, 1.0}, rng);
}

TEST(DiagonalFim, ZeroWeightsTwoSampleHandCase) {
  auto m = linear_model(1, 2, 2, 1);
  m.experts[0].first.setZero();
  LabeledBatch b;
  b.inputs = SampleMatrix(2, 2);
  b.inputs << 1.0, 2.0, -3.0, 0.5;
  b.labels = {0, 1};
  const auto fim = estimate_diagonal_fim(m, 0, b);
  // Row-major W (class c, feature j): score = (1{y = c} - 0.5) x_j.
  Eigen::VectorXd expected(4);
  for (int c = 0; c < 2; ++c) {
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int i = 0; i < 2; ++i) {
        const double s = ((b.labels[i] == c ? 1.0 : 0.0) - 0.5) * b.inputs(i, j);
        acc += s * s;
      }
      expected[c * 2 + j] = acc / 2.0;
    }
  }
  EXPECT_LT((fim.diag - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(fim.batch_size_used, 2);
}

TEST(DiagonalFim, DuplicatedBatchAndSingleSample) {
  const auto m = linear_model(2, 3, 3, 2);
  LabeledBatch b;
  b.inputs = SampleMatrix::Random(5, 3);
  b.labels = {0, 1, 2, 1, 0};
  LabeledBatch doubled;
  doubled.inputs = SampleMatrix(10, 3);
  doubled.inputs << b.inputs, b.inputs;
  doubled.labels = b.labels;
  doubled.labels.insert(doubled.labels.end(), b.labels.begin(), b.labels.end());
  const auto a = estimate_diagonal_fim(m, 1, b);
  const auto d = estimate_diagonal_fim(m, 1, doubled);
  EXPECT_LT((a.diag - d.diag).cwiseAbs().maxCoeff(), 1e-15);

  const auto one = estimate_diagonal_fim(m, 1, b.head(1));
  const Eigen::VectorXd s =
      expert_score(m.experts[1], m.arch, b.inputs.row(0).transpose(), b.labels[0]);
  EXPECT_LT((one.diag - s.cwiseProduct(s)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(estimate_diagonal_fim(m, 5, b), FisherError);
}

TEST(ExactFim, LogisticClosedForm) {
  auto m = linear_model(1, 1, 2, 3);
  m.experts[0].first << 0.7, -0.4;
  SampleMatrix x(1, 1);
  x << 1.3;
  const Eigen::MatrixXd f = exact_fim_oracle(m, 0, x);
  const double z = (0.7 - (-0.4)) * 1.3;
  const double p = 1.0 / (1.0 + std::exp(-z));
  const double expected = p * (1 - p) * 1.3 * 1.3;
  EXPECT_NEAR(f(0, 0), expected, 1e-10);
  EXPECT_NEAR(f(1, 1), expected, 1e-10);
  EXPECT_NEAR(f(0, 1), -expected, 1e-10);
}

TEST(ExactFim, PositiveSemidefinite) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto m = linear_model(2, 3, 3, seed);
    const SampleMatrix x = SampleMatrix::Random(20, 3);
    const Eigen::MatrixXd f = exact_fim_oracle(m, 1, x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(ExactFim, RejectsLargeExperts) {
  const auto m = linear_model(1, 100, 10, 4);
  EXPECT_THROW(exact_fim_oracle(m, 0, SampleMatrix::Zero(1, 100)), FisherError);
}

TEST(ExactFim, DiagonalEstimatorCorrelation) {
  const auto m = linear_model(2, 4, 3, 5);
  Rng rng = make_stream(5, StreamPurpose::kFisher);
  std::normal_distribution<double> g(0.0, 1.0);
  SampleMatrix x(10000, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  const Eigen::VectorXd exact = exact_fim_oracle(m, 0, x).diagonal();
  LabeledBatch b;
  b.inputs = x;
  b.labels = sample_expert_labels(m, 0, x, rng);
  const Eigen::VectorXd est = estimate_diagonal_fim(m, 0, b).diag;
  std::vector<double> a(exact.data(), exact.data() + exact.size());
  std::vector<double> c(est.data(), est.data() + est.size());
  EXPECT_GE(pearson(a, c), 0.95);
}

TEST(Heterogeneity, IdentityFims) {
  const std::vector<Eigen::MatrixXd> fims = {Eigen::MatrixXd::Identity(2, 2),
                                             Eigen::MatrixXd::Identity(2, 2)};
  const auto h = heterogeneity_matrix(fims, ProbabilityVector({0.3, 0.7}));
  EXPECT_NEAR(h.entries(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(h.entries(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(h.entries(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(h.frob_norm, std::sqrt(0.5), 1e-15);

  std::vector<DiagonalFIM> diag(2);
  for (auto& d : diag) d.diag = Eigen::VectorXd::Ones(2);
  const auto hd = heterogeneity_matrix(diag, ProbabilityVector({0.3, 0.7}));
  EXPECT_TRUE(hd.diagonal_only);
  EXPECT_NEAR(hd.frob_norm, std::sqrt(0.5), 1e-15);
  EXPECT_TRUE(hd.dense().isApprox(h.entries));
}

TEST(Heterogeneity, SingleExpertCollapse) {
  Eigen::MatrixXd f(2, 2);
  f << 2.0, 0.5, 0.5, 1.0;
  const std::vector<Eigen::MatrixXd> fims = {f};
  const auto h = heterogeneity_matrix(fims, ProbabilityVector({1.0}));
  const Eigen::MatrixXd expected = f - f.cwiseProduct(f) / f.trace();
  EXPECT_LT((h.entries - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Heterogeneity, MatchesBruteForceUnderScaling) {
  Rng rng = make_stream(6, StreamPurpose::kFisher);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  std::vector<Eigen::MatrixXd> fims;
  for (int e = 0; e < 3; ++e) {
    Eigen::MatrixXd a(3, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
    fims.push_back(a * a.transpose());
  }
  const ProbabilityVector p({0.2, 0.5, 0.3});
  for (double c : {1.0, 0.5, 3.0}) {
    std::vector<Eigen::MatrixXd> scaled;
    for (const auto& f : fims) scaled.push_back(c * f);
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(3, 3);
    for (int e = 0; e < 3; ++e) mean += p[e] * scaled[e];
    Eigen::MatrixXd brute(3, 3);
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) brute(j, k) = mean(j, k) - mean(j, k) * mean(j, k) / mean.trace();
    }
    const auto h = heterogeneity_matrix(scaled, p);
    EXPECT_LT((h.entries - brute).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_NEAR(h.frob_norm, brute.norm(), 1e-13);
  }
  EXPECT_THROW(heterogeneity_matrix(fims, ProbabilityVector({0.5, 0.5})), FisherError);
}

TEST(Fhs, Examples) {
  EXPECT_NEAR(fhs(3.0, 3.0).value, 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(fhs(0.0, 3.0).value, 0.0);
  EXPECT_NEAR(fhs(2.0, 4.0).value, 0.5, 0.5 * 1e-8);
}

TEST(SpecializationRateBound, Examples) {
  EXPECT_EQ(specialization_rate_bound(1.0, Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 1), 3.0),
            0.0);
  const Eigen::Vector2d g(1.0, 2.0);
  const Eigen::Vector2d f(2.0, 0.5);
  const double natural = std::sqrt(g[0] * g[0] / f[0] + g[1] * g[1] / f[1]);
  EXPECT_NEAR(specialization_rate_bound(0.1, g, f, 0.0), 0.1 * natural, 1e-15);
  EXPECT_NEAR(specialization_rate_bound(1.0, Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1), 3.0),
              0.63246, 1e-5);
}

TEST(FailureProbabilityBound, Examples) {
  EXPECT_EQ(fhs_failure_probability_bound(1.0 + 1e-9, 8, 10, 1.0), 1.0);
  EXPECT_EQ(fhs_failure_probability_bound(1.5, 8, 10, 1.0), 1.0);
  EXPECT_NEAR(20.0 * std::exp(-0.0625), 18.79, 0.01);
  EXPECT_LT(fhs_failure_probability_bound(1.5, 100000, 10, 1.0), 1e-10);
  EXPECT_THROW(fhs_failure_probability_bound(0.9, 8, 10, 1.0), FisherError);
}

}  // namespace
}  // namespace fisher_moe
