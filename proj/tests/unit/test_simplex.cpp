// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/rng.hpp"
#include "fisher_moe/simplex.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace fisher_moe {
namespace {

using std::numbers::pi;

ProbabilityVector random_simplex_point(Rng& rng, int n) {
  std::exponential_distribution<double> e(1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = e(rng);
  return ProbabilityVector(v / v.sum());
}

TEST(ProbabilityVector, RejectsInvalidInput) {
  EXPECT_THROW(ProbabilityVector({0.5, 0.4}), GeometryError);
  EXPECT_THROW(ProbabilityVector({1.1, -0.1}), GeometryError);
  EXPECT_THROW(ProbabilityVector(Eigen::VectorXd()), GeometryError);
  EXPECT_NO_THROW(ProbabilityVector({1.0}));
}

TEST(ProbabilityVector, ClampsRoundingNoise) {
  const ProbabilityVector p({1.0 + 1e-13, -1e-13});
  EXPECT_GE(p[1], 0.0);
  EXPECT_NEAR(p.values().sum(), 1.0, 1e-15);
}

TEST(SphericalPoint, RejectsOffSphere) {
  EXPECT_THROW(SphericalPoint(Eigen::Vector2d(1.0, 1.0)), GeometryError);
  EXPECT_THROW(SphericalPoint(Eigen::Vector2d(-0.6, 0.8)), GeometryError);
  EXPECT_NO_THROW(SphericalPoint(Eigen::Vector2d(0.6, 0.8)));
}

TEST(FisherRaoDistance, IdenticalIsZero) {
  const auto u = ProbabilityVector::uniform(4);
  EXPECT_DOUBLE_EQ(fisher_rao_distance(u, u), 0.0);
}

TEST(FisherRaoDistance, DisjointSupportIsPi) {
  EXPECT_NEAR(fisher_rao_distance(ProbabilityVector({1, 0, 0}), ProbabilityVector({0, 1, 0})), pi,
              1e-12);
}

TEST(FisherRaoDistance, UniformToVertex) {
  EXPECT_NEAR(fisher_rao_distance(ProbabilityVector::uniform(4), ProbabilityVector({1, 0, 0, 0})),
              2.0 * pi / 3.0, 1e-12);
  EXPECT_NEAR(2.0 * pi / 3.0, 2.094395, 1e-6);
}

TEST(FisherRaoDistance, SizeMismatchThrows) {
  EXPECT_THROW(fisher_rao_distance(ProbabilityVector::uniform(3), ProbabilityVector::uniform(4)),
               GeometryError);
}

TEST(FisherRaoDistance, IsTwiceTheGreatCircleAngle) {
  Rng rng = make_stream(11, StreamPurpose::kData);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + trial % 7;
    const auto p = random_simplex_point(rng, n);
    const auto q = random_simplex_point(rng, n);
    const Eigen::VectorXd a = sqrt_embed(p).coords();
    const Eigen::VectorXd b = sqrt_embed(q).coords();
    // Chord length c between unit vectors gives the angle 2 asin(c / 2).
    const double angle = 2.0 * std::asin(std::min(1.0, (a - b).norm() / 2.0));
    worst = std::max(worst, std::abs(fisher_rao_distance(p, q) - 2.0 * angle));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(SqrtEmbed, Examples) {
  EXPECT_TRUE(sqrt_embed(ProbabilityVector::uniform(4)).coords().isApprox(
      Eigen::Vector4d::Constant(0.5), 1e-15));
  EXPECT_EQ(sqrt_embed(ProbabilityVector({1, 0})).coords(), Eigen::Vector2d(1, 0));
  EXPECT_TRUE(sqrt_embed(ProbabilityVector({0.64, 0.36})).coords().isApprox(
      Eigen::Vector2d(0.8, 0.6), 1e-15));
}

TEST(SqrtEmbed, UnitNormAndRoundTrip) {
  Rng rng = make_stream(12, StreamPurpose::kData);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_simplex_point(rng, 5);
    const auto phi = sqrt_embed(p);
    EXPECT_NEAR(phi.coords().norm(), 1.0, 1e-9);
    EXPECT_LT((sphere_to_simplex(phi).values() - p.values()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Fsi, Examples) {
  EXPECT_DOUBLE_EQ(fsi(ProbabilityVector::uniform(8)), 0.0);
  EXPECT_NEAR(fsi(ProbabilityVector({0.7, 0.1, 0.1, 0.1})), 0.935116, 1e-6);
  double previous = 0.0;
  for (double eps : {1e-2, 1e-4, 1e-6, 1e-8, 0.0}) {
    const double v = fsi(ProbabilityVector({1 - 3 * eps, eps, eps, eps}));
    EXPECT_GT(v, previous);
    previous = v;
  }
  EXPECT_NEAR(previous, 2.0 * pi / 3.0, 1e-12);
}

TEST(Fsi, MaxExamples) {
  EXPECT_NEAR(fsi_max(2), pi / 2.0, 1e-12);
  EXPECT_NEAR(fsi_max(4), 2.0 * pi / 3.0, 1e-12);
  EXPECT_NEAR(fsi_max(8), 2.418858, 1e-6);
  EXPECT_THROW(fsi_max(0), GeometryError);
}

TEST(Fsi, BoundedOnRandomPoints) {
  Rng rng = make_stream(13, StreamPurpose::kData);
  for (int trial = 0; trial < 20000; ++trial) {
    const int n = 2 + trial % 15;
    const double v = fsi(random_simplex_point(rng, n));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, fsi_max(n));
  }
}

TEST(Fsi, PermutationInvariantBitForBit) {
  Rng rng = make_stream(14, StreamPurpose::kData);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_simplex_point(rng, 6);
    Eigen::VectorXd shuffled = p.values();
    std::shuffle(shuffled.data(), shuffled.data() + shuffled.size(), rng);
    EXPECT_EQ(fsi(ProbabilityVector(p.values())), fsi(ProbabilityVector(shuffled)));
  }
}

TEST(GeodesicInterpolate, Endpoints) {
  Rng rng = make_stream(15, StreamPurpose::kData);
  const auto p = random_simplex_point(rng, 4);
  const auto q = random_simplex_point(rng, 4);
  EXPECT_LT((geodesic_interpolate(p, q, 0.0).values() - p.values()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((geodesic_interpolate(p, q, 1.0).values() - q.values()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GeodesicInterpolate, QuarterCircleMidpoint) {
  const auto m = geodesic_interpolate(ProbabilityVector({1, 0}), ProbabilityVector({0, 1}), 0.5);
  EXPECT_NEAR(m[0], 0.5, 1e-15);
  EXPECT_NEAR(m[1], 0.5, 1e-15);
}

TEST(GeodesicInterpolate, MatchesSlerp) {
  // Omega = pi/3 between (1/2,1/2,1/2,1/2) and (1,0,0,0); at s = 1/2 the
  // slerp weights are sin(pi/6)/sin(pi/3) = 1/sqrt(3) on each end.
  const auto m =
      geodesic_interpolate(ProbabilityVector::uniform(4), ProbabilityVector({1, 0, 0, 0}), 0.5);
  const double w = 1.0 / std::sqrt(3.0);
  const double first = w * 0.5 + w;
  const double rest = w * 0.5;
  EXPECT_NEAR(m[0], first * first, 1e-14);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(m[i], rest * rest, 1e-14);
  EXPECT_NEAR(first * first + 3 * rest * rest, 1.0, 1e-14);
}

TEST(GeodesicInterpolate, SplitsDistanceLinearly) {
  Rng rng = make_stream(16, StreamPurpose::kData);
  const auto p = random_simplex_point(rng, 5);
  const auto q = random_simplex_point(rng, 5);
  const double d = fisher_rao_distance(p, q);
  for (double s : {0.1, 0.25, 0.5, 0.8}) {
    EXPECT_NEAR(fisher_rao_distance(p, geodesic_interpolate(p, q, s)), s * d, 1e-10);
  }
}

TEST(Softmax, Examples) {
  const auto u = softmax(Eigen::Vector3d::Zero(), 1.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u[i], 1.0 / 3.0, 1e-15);
  const auto a = softmax(Eigen::Vector2d(1, 0), 1.0);
  EXPECT_NEAR(a[0], 0.731059, 1e-6);
  EXPECT_NEAR(a[1], 0.268941, 1e-6);
  const auto b = softmax(Eigen::Vector2d(1, 0), 0.5);
  EXPECT_NEAR(b[0], 0.880797, 1e-6);
  EXPECT_NEAR(b[1], 0.119203, 1e-6);
}

TEST(Softmax, StableForLargeLogits) {
  const auto p = softmax(Eigen::Vector2d(1000, 0), 1.0);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_THROW(softmax(Eigen::Vector2d(1, 0), 0.0), GeometryError);
}

TEST(SoftmaxJacobian, UniformTwoExperts) {
  const Eigen::MatrixXd j = softmax_jacobian(Eigen::Vector2d::Zero(), 1.0);
  Eigen::Matrix2d expected;
  expected << 0.25, -0.25, -0.25, 0.25;
  EXPECT_TRUE(j.isApprox(expected, 1e-15));
}

TEST(SoftmaxJacobian, UnweightedGramIdentityDoesNotHold) {
  // At p = (1/2, 1/2): tau^2 J J^T + p p^T = [[3/8, 1/8], [1/8, 3/8]], not diag(p).
  const Eigen::MatrixXd j = softmax_jacobian(Eigen::Vector2d::Zero(), 1.0);
  const Eigen::Vector2d p(0.5, 0.5);
  const Eigen::MatrixXd lhs = j * j.transpose() + p * p.transpose();
  EXPECT_NEAR(lhs(0, 0), 0.375, 1e-15);
  EXPECT_NEAR(lhs(0, 1), 0.125, 1e-15);
}

TEST(SoftmaxJacobian, MetricWeightedIdentityAndRowSums) {
  Rng rng = make_stream(17, StreamPurpose::kData);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> t(0.2, 3.0);
  double identity_err = 0.0;
  double row_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + trial % 8;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = g(rng);
    const double tau = t(rng);
    const Eigen::VectorXd p = softmax(w, tau).values();
    const Eigen::MatrixXd j = softmax_jacobian(w, tau);
    const Eigen::MatrixXd fisher = p.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd lhs = tau * tau * j * fisher * j.transpose() + p * p.transpose();
    const Eigen::MatrixXd rhs = p.asDiagonal();
    identity_err = std::max(identity_err, (lhs - rhs).cwiseAbs().maxCoeff());
    row_err = std::max(row_err, j.rowwise().sum().cwiseAbs().maxCoeff());
  }
  EXPECT_LT(identity_err, 1e-10);
  EXPECT_LT(row_err, 1e-12);
}

TEST(SoftmaxJacobian, MatchesFiniteDifferences) {
  const Eigen::Vector3d w(0.3, -1.2, 0.8);
  const double tau = 0.7;
  const Eigen::MatrixXd j = softmax_jacobian(w, tau);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d wp = w;
    Eigen::Vector3d wm = w;
    wp[k] += h;
    wm[k] -= h;
    const Eigen::VectorXd col = (softmax(wp, tau).values() - softmax(wm, tau).values()) / (2 * h);
    EXPECT_LT((col - j.col(k)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GeodesicStepDeviation, ExactContinuationIsZero) {
  const SphericalPoint base(Eigen::Vector3d(0.6, 0.8, 0.0));
  const Eigen::Vector3d tangent(0.08, -0.06, 0.05);
  const SphericalPoint next(sphere_exp_map(base, tangent));
  EXPECT_NEAR(geodesic_step_deviation(base, next, tangent), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(geodesic_step_deviation(base, base, Eigen::Vector3d::Zero()), 0.0);
}

// Integrates x'' = -|x'|^2 x (unit-sphere geodesic) with classical RK4.
Eigen::VectorXd rk4_great_circle(const Eigen::VectorXd& x0, const Eigen::VectorXd& v0, int steps) {
  const Eigen::Index n = x0.size();
  Eigen::VectorXd state(2 * n);
  state << x0, v0;
  auto rhs = [n](const Eigen::VectorXd& s) {
    Eigen::VectorXd d(2 * n);
    const Eigen::VectorXd x = s.head(n);
    const Eigen::VectorXd v = s.tail(n);
    d << v, -v.squaredNorm() * x;
    return d;
  };
  const double h = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const Eigen::VectorXd k1 = rhs(state);
    const Eigen::VectorXd k2 = rhs(state + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(state + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(state + h * k3);
    state += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return state.head(n);
}

TEST(GeodesicStepDeviation, MatchesNumericalIntegrator) {
  Rng rng = make_stream(18, StreamPurpose::kData);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_simplex_point(rng, 4);
    const auto q = random_simplex_point(rng, 4);
    const SphericalPoint prev = sqrt_embed(p);
    const SphericalPoint next = sqrt_embed(q);
    Eigen::VectorXd tangent(4);
    for (int i = 0; i < 4; ++i) tangent[i] = g(rng);
    tangent -= tangent.dot(prev.coords()) * prev.coords();
    const Eigen::VectorXd oracle = rk4_great_circle(prev.coords(), tangent, 2000);
    EXPECT_NEAR(geodesic_step_deviation(prev, next, tangent), (next.coords() - oracle).norm(),
                1e-6);
  }
}

TEST(GeodesicBound, Examples) {
  EXPECT_DOUBLE_EQ(geodesic_bound(0.1, 0.0, 1.0), 0.0);
  EXPECT_NEAR(geodesic_bound(0.1, 1.0, 1.0), 0.000625, 1e-15);
  EXPECT_NEAR(geodesic_bound(0.1, 1.0, 2.0), 0.5 * geodesic_bound(0.1, 1.0, 1.0), 1e-18);
  EXPECT_NEAR(geodesic_bound(0.01, 1.0, 1.0), geodesic_bound(0.1, 1.0, 1.0) / 100.0, 1e-18);
}

TEST(SqrtEmbedDifferential, MatchesFiniteDifference) {
  const ProbabilityVector p({0.5, 0.3, 0.2});
  const Eigen::Vector3d dp(1e-7, -4e-8, -6e-8);
  const Eigen::VectorXd predicted = sqrt_embed_differential(p, dp);
  const Eigen::VectorXd actual =
      sqrt_embed(ProbabilityVector(p.values() + dp)).coords() - sqrt_embed(p).coords();
  EXPECT_LT((predicted - actual).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(sqrt_embed_differential(ProbabilityVector({1, 0}), Eigen::Vector2d(0.1, -0.1))[1],
            0.0);
}

TEST(OrderedSum, KahanOnLongInput) {
  std::vector<double> terms(100000, 0.1);
  EXPECT_NEAR(ordered_sum(terms), 10000.0, 1e-9);
  EXPECT_DOUBLE_EQ(ordered_sum(std::vector<double>{1.0, 2.0}), 3.0);
}

}  // namespace
}  // namespace fisher_moe
