// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Fisher geometry of the categorical probability simplex.
//
// The simplex carries the Fisher metric F(p) = diag(1/p). Under the square-root
// map p -> sqrt(p) it becomes the positive orthant of the unit sphere with the
// round metric scaled by 4, so every geodesic computation here is done as a
// great-circle computation on the sphere and mapped back.

#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>

namespace fisher_moe {

/// Raised when a vector fails the simplex or sphere invariants.
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A point on the closed simplex. Construction validates and renormalizes.
class ProbabilityVector {
 public:
  /// Accepts entries with sum in [1 - 1e-6, 1 + 1e-6]; tiny negative rounding
  /// noise (>= -1e-12) is clamped to zero, anything below is rejected.
  explicit ProbabilityVector(Eigen::VectorXd values);
  ProbabilityVector(std::initializer_list<double> values);

  static ProbabilityVector uniform(Eigen::Index n);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  Eigen::Index size() const noexcept { return values_.size(); }
  double operator[](Eigen::Index i) const { return values_[i]; }

  friend bool operator==(const ProbabilityVector& a, const ProbabilityVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Eigen::VectorXd values_;
};

/// A point on the positive orthant of the unit sphere.
class SphericalPoint {
 public:
  /// Rejects negative coordinates or a norm further than 1e-9 from one.
  explicit SphericalPoint(Eigen::VectorXd coords);

  const Eigen::VectorXd& coords() const noexcept { return coords_; }
  Eigen::Index size() const noexcept { return coords_.size(); }

 private:
  Eigen::VectorXd coords_;
};

/// Sum in ascending index order; Kahan-compensated above 1000 terms.
double ordered_sum(std::span<const double> terms);

/// 2 arccos(sum_i sqrt(p_i q_i)), in radians, within [0, pi].
double fisher_rao_distance(const ProbabilityVector& p, const ProbabilityVector& q);

SphericalPoint sqrt_embed(const ProbabilityVector& p);

/// Inverse of sqrt_embed (squares the coordinates).
ProbabilityVector sphere_to_simplex(const SphericalPoint& phi);

/// Fisher Specialization Index: Fisher-Rao distance from uniform.
///
/// The sqrt terms are summed in sorted order, so the value is bit-identical
/// under any relabeling of the experts.
double fsi(const ProbabilityVector& p_bar);

/// Largest attainable fsi on n categories (reached at a vertex).
double fsi_max(int n);

/// Point at fraction s along the Fisher-Rao geodesic from p to q.
ProbabilityVector geodesic_interpolate(const ProbabilityVector& p, const ProbabilityVector& q,
                                       double s);

/// softmax(w / tau) with max subtraction.
ProbabilityVector softmax(const Eigen::Ref<const Eigen::VectorXd>& w, double tau);

/// d softmax(w/tau) / dw = (diag(p) - p p^T) / tau.
Eigen::MatrixXd softmax_jacobian(const Eigen::Ref<const Eigen::VectorXd>& w, double tau);

/// Same Jacobian from an already evaluated p.
Eigen::MatrixXd softmax_jacobian_from_probs(const Eigen::Ref<const Eigen::VectorXd>& p, double tau);

/// Great-circle point reached from `base` with initial velocity `tangent`
/// after unit time. The tangent is projected onto the tangent space first.
Eigen::VectorXd sphere_exp_map(const SphericalPoint& base,
                               const Eigen::Ref<const Eigen::VectorXd>& tangent);

/// Ambient distance between phi_next and the great-circle continuation of
/// phi_prev along predicted_tangent.
double geodesic_step_deviation(const SphericalPoint& phi_prev, const SphericalPoint& phi_next,
                               const Eigen::Ref<const Eigen::VectorXd>& predicted_tangent);

/// kappa * eta^2 * |grad|^2 / (4 tau) with sectional curvature kappa = 1/4.
double geodesic_bound(double eta, double grad_norm, double tau);

/// Pushes a simplex displacement through the differential of sqrt_embed:
/// d phi_i = dp_i / (2 sqrt(p_i)). Coordinates with p_i == 0 get zero.
Eigen::VectorXd sqrt_embed_differential(const ProbabilityVector& p,
                                        const Eigen::Ref<const Eigen::VectorXd>& dp);

}  // namespace fisher_moe
