// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/simplex.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace fisher_moe {

namespace {

constexpr double kSumTolerance = 1e-6;
constexpr double kNegativeNoise = 1e-12;
constexpr double kUnitNormTolerance = 1e-9;
constexpr double kArccosSnap = 1e-12;

// 2 arccos(c) with c clamped to [0, 1] and snapped to 1 when within 1e-12.
double two_arccos(double c) {
  if (c >= 1.0 - kArccosSnap) return 0.0;
  return 2.0 * std::acos(std::clamp(c, 0.0, 1.0));
}

void require_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw GeometryError(fmt::format("{}: dimension mismatch ({} vs {})", what, a, b));
  }
}

}  // namespace

ProbabilityVector::ProbabilityVector(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() < 1) throw GeometryError("probability vector must be non-empty");
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    if (!std::isfinite(v)) throw GeometryError("probability vector has a non-finite entry");
    if (v < -kNegativeNoise) {
      throw GeometryError(fmt::format("probability vector entry {} is negative ({})", i, v));
    }
    if (v < 0.0) values_[i] = 0.0;
  }
  // Summed in sorted order so the renormalization does not depend on entry order.
  std::vector<double> sorted(values_.data(), values_.data() + values_.size());
  std::sort(sorted.begin(), sorted.end());
  const double total = ordered_sum(sorted);
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw GeometryError(fmt::format("probability vector sums to {}, not 1", total));
  }
  values_ /= total;
}

ProbabilityVector::ProbabilityVector(std::initializer_list<double> values)
    : ProbabilityVector(Eigen::Map<const Eigen::VectorXd>(values.begin(),
                                                          static_cast<Eigen::Index>(values.size()))
                            .eval()) {}

ProbabilityVector ProbabilityVector::uniform(Eigen::Index n) {
  if (n < 1) throw GeometryError("uniform distribution needs n >= 1");
  return ProbabilityVector(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

SphericalPoint::SphericalPoint(Eigen::VectorXd coords) : coords_(std::move(coords)) {
  if ((coords_.array() < 0.0).any()) {
    throw GeometryError("spherical point must lie in the positive orthant");
  }
  if (std::abs(coords_.norm() - 1.0) > kUnitNormTolerance) {
    throw GeometryError(fmt::format("spherical point has norm {}, not 1", coords_.norm()));
  }
}

double ordered_sum(std::span<const double> terms) {
  if (terms.size() <= 1000) {
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  }
  double s = 0.0;
  double c = 0.0;
  for (double t : terms) {
    const double y = t - c;
    const double next = s + y;
    c = (next - s) - y;
    s = next;
  }
  return s;
}

double fisher_rao_distance(const ProbabilityVector& p, const ProbabilityVector& q) {
  require_same_size(p.size(), q.size(), "fisher_rao_distance");
  std::vector<double> terms(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) terms[i] = std::sqrt(p[i] * q[i]);
  return two_arccos(ordered_sum(terms));
}

SphericalPoint sqrt_embed(const ProbabilityVector& p) {
  Eigen::VectorXd phi = p.values().array().sqrt();
  // Renormalize away the rounding left over from the simplex normalization.
  phi /= phi.norm();
  return SphericalPoint(std::move(phi));
}

ProbabilityVector sphere_to_simplex(const SphericalPoint& phi) {
  Eigen::VectorXd p = phi.coords().array().square();
  return ProbabilityVector(p / p.sum());
}

double fsi(const ProbabilityVector& p_bar) {
  const auto n = p_bar.size();
  if (n < 2) throw GeometryError("fsi needs at least two experts");
  std::vector<double> roots(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) roots[i] = std::sqrt(p_bar[i]);
  std::sort(roots.begin(), roots.end());
  return two_arccos(ordered_sum(roots) / std::sqrt(static_cast<double>(n)));
}

double fsi_max(int n) {
  if (n < 2) throw GeometryError(fmt::format("fsi_max needs n >= 2, got {}", n));
  return 2.0 * std::acos(1.0 / std::sqrt(static_cast<double>(n)));
}

ProbabilityVector geodesic_interpolate(const ProbabilityVector& p, const ProbabilityVector& q,
                                       double s) {
  require_same_size(p.size(), q.size(), "geodesic_interpolate");
  if (!(s >= 0.0 && s <= 1.0)) throw GeometryError("interpolation parameter must be in [0, 1]");
  if (s == 0.0) return p;
  if (s == 1.0) return q;
  const double omega = 0.5 * fisher_rao_distance(p, q);
  if (omega < 1e-12) return p;
  const Eigen::VectorXd a = p.values().array().sqrt();
  const Eigen::VectorXd b = q.values().array().sqrt();
  const double sin_omega = std::sin(omega);
  Eigen::VectorXd phi = (std::sin((1.0 - s) * omega) / sin_omega) * a +
                        (std::sin(s * omega) / sin_omega) * b;
  Eigen::VectorXd out = phi.array().square();
  return ProbabilityVector(out / out.sum());
}

ProbabilityVector softmax(const Eigen::Ref<const Eigen::VectorXd>& w, double tau) {
  if (!(tau > 0.0)) throw GeometryError(fmt::format("softmax temperature must be > 0, got {}", tau));
  if (w.size() < 1) throw GeometryError("softmax of an empty vector");
  if (!w.allFinite()) throw GeometryError("softmax logits must be finite");
  const double top = w.maxCoeff();
  Eigen::VectorXd e = ((w.array() - top) / tau).exp();
  return ProbabilityVector(e / e.sum());
}

Eigen::MatrixXd softmax_jacobian_from_probs(const Eigen::Ref<const Eigen::VectorXd>& p,
                                            double tau) {
  Eigen::MatrixXd j = -p * p.transpose();
  j.diagonal() += p;
  return j / tau;
}

Eigen::MatrixXd softmax_jacobian(const Eigen::Ref<const Eigen::VectorXd>& w, double tau) {
  return softmax_jacobian_from_probs(softmax(w, tau).values(), tau);
}

Eigen::VectorXd sphere_exp_map(const SphericalPoint& base,
                               const Eigen::Ref<const Eigen::VectorXd>& tangent) {
  const Eigen::VectorXd& phi = base.coords();
  require_same_size(phi.size(), tangent.size(), "sphere_exp_map");
  const Eigen::VectorXd v = tangent - tangent.dot(phi) * phi;
  const double speed = v.norm();
  if (speed < 1e-300) return phi;
  return std::cos(speed) * phi + (std::sin(speed) / speed) * v;
}

double geodesic_step_deviation(const SphericalPoint& phi_prev, const SphericalPoint& phi_next,
                               const Eigen::Ref<const Eigen::VectorXd>& predicted_tangent) {
  require_same_size(phi_prev.size(), phi_next.size(), "geodesic_step_deviation");
  return (phi_next.coords() - sphere_exp_map(phi_prev, predicted_tangent)).norm();
}

double geodesic_bound(double eta, double grad_norm, double tau) {
  if (!(eta > 0.0)) throw GeometryError("geodesic_bound: learning rate must be > 0");
  if (!(tau > 0.0)) throw GeometryError("geodesic_bound: temperature must be > 0");
  if (!(grad_norm >= 0.0)) throw GeometryError("geodesic_bound: gradient norm must be >= 0");
  constexpr double kappa = 0.25;
  return kappa * eta * eta * grad_norm * grad_norm / (4.0 * tau);
}

Eigen::VectorXd sqrt_embed_differential(const ProbabilityVector& p,
                                        const Eigen::Ref<const Eigen::VectorXd>& dp) {
  require_same_size(p.size(), dp.size(), "sqrt_embed_differential");
  Eigen::VectorXd out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? dp[i] / (2.0 * std::sqrt(p[i])) : 0.0;
  }
  return out;
}

}  // namespace fisher_moe
