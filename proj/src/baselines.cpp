// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/baselines.hpp"

#include "fisher_moe/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fisher_moe {

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double routing_entropy(const ProbabilityVector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

double load_imbalance(std::span<const long> counts) {
  if (counts.empty()) throw std::invalid_argument("load_imbalance: no experts");
  double total = 0.0;
  for (long c : counts) {
    if (c < 0) throw std::invalid_argument("load_imbalance: negative count");
    total += static_cast<double>(c);
  }
  if (total <= 0.0) throw std::invalid_argument("load_imbalance: zero total");
  const double n = static_cast<double>(counts.size());
  const double mean = 1.0 / n;
  double var = 0.0;
  for (long c : counts) {
    const double f = static_cast<double>(c) / total;
    var += (f - mean) * (f - mean);
  }
  return std::sqrt(var / n) / mean;
}

namespace {

template <class F>
double mean_over_pairs(std::span<const Eigen::VectorXd> experts, F f) {
  if (experts.size() < 2) throw std::invalid_argument("need at least two experts");
  double sum = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    for (std::size_t j = i + 1; j < experts.size(); ++j) {
      sum += f(cosine_similarity(experts[i], experts[j]));
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

}  // namespace

double expert_overlap(std::span<const Eigen::VectorXd> flattened_experts) {
  return mean_over_pairs(flattened_experts, [](double c) { return std::abs(c); });
}

double mean_pairwise_cosine(std::span<const Eigen::VectorXd> flattened_experts) {
  return mean_over_pairs(flattened_experts, [](double c) { return c; });
}

LinearFit fit_line(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: all fractions coincide");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  // A flat series is fit perfectly.
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

ValLossVerdict val_loss_failure_predictor(std::span<const std::pair<double, double>> loss_series) {
  if (loss_series.size() < 4) {
    throw std::invalid_argument("val_loss_failure_predictor: need at least 4 points");
  }
  for (std::size_t i = 1; i < loss_series.size(); ++i) {
    if (!(loss_series[i].first > loss_series[i - 1].first)) {
      throw std::invalid_argument("val_loss_failure_predictor: fractions must increase");
    }
  }
  ValLossVerdict v;
  v.fit = fit_line(loss_series);
  const auto& [now_fraction, now_loss] = loss_series.back();
  const double extrapolated = now_loss + v.fit.slope * (1.0 - now_fraction);
  const double scale = std::max(std::abs(now_loss), 1e-12);
  v.extrapolation_ratio = extrapolated / scale;
  const bool rising = v.fit.slope > 0.0 && v.fit.r_squared > 0.7;
  const bool blows_up = extrapolated > 1.5 * now_loss;
  v.predicts_failure = rising || blows_up;
  if (v.predicts_failure) {
    v.score = 1.0;
  } else {
    const double relative_slope = v.fit.slope / scale;
    v.score = std::min(std::max(relative_slope, v.extrapolation_ratio - 1.0), 1.0 - 1e-9);
  }
  return v;
}

double auc(std::span<const PredictionScore> scores) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) throw std::invalid_argument("auc: non-finite score");
    (s.failed ? pos : neg).push_back(s.score);
  }
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument("auc: need at least one failed and one healthy run");
  }
  double u = 0.0;
  for (double a : pos) {
    for (double b : neg) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return u / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<ThresholdReport> threshold_sweep(std::span<const PredictionScore> scores,
                                             std::span<const double> thresholds) {
  const bool any_pos = std::any_of(scores.begin(), scores.end(), [](auto& s) { return s.failed; });
  const bool any_neg = std::any_of(scores.begin(), scores.end(), [](auto& s) { return !s.failed; });
  if (!any_pos || !any_neg) {
    throw std::invalid_argument("threshold_sweep: need at least one failed and one healthy run");
  }
  std::vector<ThresholdReport> out;
  for (double t : thresholds) {
    ThresholdReport r;
    r.threshold = t;
    for (const auto& s : scores) {
      const bool flagged = s.score > t;
      if (flagged && s.failed) ++r.true_positives;
      if (flagged && !s.failed) ++r.false_positives;
      if (!flagged && s.failed) ++r.false_negatives;
      if (!flagged && !s.failed) ++r.true_negatives;
    }
    const long flagged = r.true_positives + r.false_positives;
    r.precision_undefined = flagged == 0;
    r.precision = flagged == 0 ? 0.0 : static_cast<double>(r.true_positives) / flagged;
    r.recall = static_cast<double>(r.true_positives) / (r.true_positives + r.false_negatives);
    r.f1 = (r.precision + r.recall) == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    out.push_back(r);
  }
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("pearson: need two equally long series of length >= 2");
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

bool InvarianceReport::cosine_changes() const {
  return std::abs(cosine_before - cosine_after) > 1e-6;
}

bool InvarianceReport::entropy_changes() const { return std::abs(entropy_change) > 1e-6; }

bool InvarianceReport::fisher_rao_invariant() const {
  return fsi_permuted_max_abs_delta <= 1e-10 && fsi_shift_max_abs_delta <= 1e-10 &&
         fsi_tau_rescale_max_abs_delta <= 1e-12 && fr_permuted_max_abs_delta <= 1e-10;
}

InvarianceReport invariance_demonstration(int trials, std::uint64_t seed) {
  InvarianceReport r;
  r.trials = trials;

  const Eigen::Vector2d theta1(1.0, 1.0);
  const Eigen::Vector2d theta2(1.0, 0.0);
  const Eigen::Matrix2d a = Eigen::Vector2d(1.0, 2.0).asDiagonal();
  r.cosine_before = cosine_similarity(theta1, theta2);
  r.cosine_after = cosine_similarity(a * theta1, a * theta2);
  r.cosine_ratio = r.cosine_after / r.cosine_before;

  r.entropy_logits_1 = routing_entropy(softmax(Eigen::Vector2d(1.0, 0.0), 1.0));
  r.entropy_logits_2 = routing_entropy(softmax(Eigen::Vector2d(2.0, 0.0), 1.0));
  r.entropy_change = r.entropy_logits_2 - r.entropy_logits_1;

  Rng rng = make_stream(seed, StreamPurpose::kData);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_real_distribution<double> unit(0.25, 4.0);
  for (int t = 0; t < trials; ++t) {
    const int n = 2 + t % 15;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = normal(rng);
    const double tau = unit(rng);
    const ProbabilityVector p = softmax(w, tau);
    const double base = fsi(p);
    if (t == 0) r.fsi_original = base;

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::VectorXd wp(n);
    for (int i = 0; i < n; ++i) wp[i] = w[perm[i]];
    const ProbabilityVector pp = softmax(wp, tau);
    r.fsi_permuted_max_abs_delta = std::max(r.fsi_permuted_max_abs_delta, std::abs(fsi(pp) - base));

    Eigen::VectorXd w2(n);
    for (int i = 0; i < n; ++i) w2[i] = normal(rng);
    const ProbabilityVector q = softmax(w2, tau);
    Eigen::VectorXd w2p(n);
    for (int i = 0; i < n; ++i) w2p[i] = w2[perm[i]];
    const ProbabilityVector qp = softmax(w2p, tau);
    r.fr_permuted_max_abs_delta =
        std::max(r.fr_permuted_max_abs_delta,
                 std::abs(fisher_rao_distance(pp, qp) - fisher_rao_distance(p, q)));

    const double shift = 10.0 * normal(rng);
    const ProbabilityVector ps = softmax((w.array() + shift).matrix(), tau);
    r.fsi_shift_max_abs_delta = std::max(r.fsi_shift_max_abs_delta, std::abs(fsi(ps) - base));

    // (w, tau) -> (2w, 2tau) leaves w / tau unchanged.
    const ProbabilityVector pr = softmax(2.0 * w, 2.0 * tau);
    r.fsi_tau_rescale_max_abs_delta =
        std::max(r.fsi_tau_rescale_max_abs_delta, std::abs(fsi(pr) - base));
  }
  return r;
}

std::string invariance_report_json(const InvarianceReport& r) {
  nlohmann::ordered_json j;
  j["cosine"] = {{"theta1", {1.0, 1.0}},
                 {"theta2", {1.0, 0.0}},
                 {"transform", "diag(1,2)"},
                 {"before", r.cosine_before},
                 {"after", r.cosine_after},
                 {"ratio", r.cosine_ratio},
                 {"changes", r.cosine_changes()}};
  j["entropy"] = {{"logits", {1.0, 0.0}},
                  {"scale", 2.0},
                  {"before_nats", r.entropy_logits_1},
                  {"after_nats", r.entropy_logits_2},
                  {"change_nats", r.entropy_change},
                  {"changes", r.entropy_changes()}};
  j["fisher_rao"] = {{"trials", r.trials},
                     {"fsi_permutation_max_abs_delta", r.fsi_permuted_max_abs_delta},
                     {"distance_permutation_max_abs_delta", r.fr_permuted_max_abs_delta},
                     {"fsi_logit_shift_max_abs_delta", r.fsi_shift_max_abs_delta},
                     {"fsi_logit_tau_rescale_max_abs_delta", r.fsi_tau_rescale_max_abs_delta},
                     {"invariant", r.fisher_rao_invariant()}};
  return j.dump(2) + "\n";
}

std::string invariance_report_text(const InvarianceReport& r) {
  std::string out;
  out += "Reparameterization check\n";
  out += fmt::format("  cosine((1,1),(1,0))                 {:.5f}\n", r.cosine_before);
  out += fmt::format("  cosine after diag(1,2)              {:.5f}  (ratio {:.4f}, {:.0f}% drop)\n",
                     r.cosine_after, r.cosine_ratio, 100.0 * (1.0 - r.cosine_ratio));
  out += fmt::format("  entropy softmax((1,0))              {:.5f} nats\n", r.entropy_logits_1);
  out += fmt::format("  entropy softmax((2,0))              {:.5f} nats  (change {:+.5f})\n",
                     r.entropy_logits_2, r.entropy_change);
  out += fmt::format("  FSI max |delta| under permutation   {:.3e}  ({} trials)\n",
                     r.fsi_permuted_max_abs_delta, r.trials);
  out += fmt::format("  d_FR max |delta| under permutation  {:.3e}\n", r.fr_permuted_max_abs_delta);
  out += fmt::format("  FSI max |delta| under logit shift   {:.3e}\n", r.fsi_shift_max_abs_delta);
  out += fmt::format("  FSI max |delta| under (2w, 2tau)    {:.3e}\n",
                     r.fsi_tau_rescale_max_abs_delta);
  out += fmt::format("  verdict: cosine {}, entropy {}, Fisher-Rao {}\n",
                     r.cosine_changes() ? "changes" : "unchanged",
                     r.entropy_changes() ? "changes" : "unchanged",
                     r.fisher_rao_invariant() ? "invariant" : "NOT invariant");
  return out;
}

}  // namespace fisher_moe
