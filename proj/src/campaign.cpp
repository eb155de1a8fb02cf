// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/campaign.hpp"

#include "fisher_moe/io.hpp"
#include "fisher_moe/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fisher_moe {

namespace {

const TrajectoryRecord& nearest_record(const std::vector<TrajectoryRecord>& trajectory,
                                       long total_steps, double fraction) {
  const double target = fraction * static_cast<double>(total_steps);
  const TrajectoryRecord* best = &trajectory.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& r : trajectory) {
    const double gap = std::abs(static_cast<double>(r.step) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = &r;
    }
  }
  return *best;
}

template <class T>
const T& pick(const std::vector<T>& options, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
  return options[d(rng)];
}

std::string draw_cell(double v) { return format_real(v); }

double parse_real_cell(const CsvTable& t, std::size_t row, const char* name) {
  return t.real(row, name);
}

bool parse_bool_cell(const CsvTable& t, std::size_t row, const char* name) {
  const std::string& cell = t.rows[row][t.column(name)];
  if (cell == "true") return true;
  if (cell == "false") return false;
  throw IoError(fmt::format("csv row {} column '{}': '{}' is not a boolean", row + 2, name, cell));
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<LotteryDraw> draw_lottery(const ExperimentConfig& config, int count) {
  if (count < 0) throw std::invalid_argument("draw_lottery: count must be >= 0");
  Rng rng = make_stream(config.campaign.seeds.front(), StreamPurpose::kLottery);
  const std::vector<std::string> separations = {"low", "high"};
  std::vector<LotteryDraw> out;
  for (int i = 0; i < count; ++i) {
    LotteryDraw d;
    d.index = i;
    d.lambda = pick(config.lottery.lambdas, rng);
    d.eta = pick(config.lottery.etas, rng);
    d.init_scale = pick(config.lottery.init_scales, rng);
    d.separation_label = pick(separations, rng);
    d.separation = d.separation_label == "low" ? config.lottery.separation_low
                                               : config.lottery.separation_high;
    d.n_experts = pick(config.lottery.n_experts, rng);
    out.push_back(d);
  }
  return out;
}

ExperimentConfig apply_draw(const ExperimentConfig& config, const LotteryDraw& draw) {
  ExperimentConfig c = config;
  c.model.lambda = draw.lambda;
  c.training.eta = draw.eta;
  c.model.init_scale = draw.init_scale;
  c.task.separation = draw.separation;
  c.model.n_experts = draw.n_experts;
  if (c.model.top_k > c.model.n_experts) c.model.top_k = c.model.n_experts;
  c.diagnostics.track_geodesic = false;
  return c;
}

std::uint64_t run_seed(std::uint64_t seed, int index) {
  return splitmix64(seed ^ splitmix64(0x5eed0000ULL + static_cast<std::uint64_t>(index)));
}

RunDigest digest_run(const RunResult& result, int index, std::uint64_t campaign_seed,
                     const LotteryDraw& draw, double fraction) {
  RunDigest d;
  d.run_id = fmt::format("cfg{:03d}-seed{}", index, campaign_seed);
  d.index = index;
  d.campaign_seed = campaign_seed;
  d.seed = result.seed;
  d.draw = draw;
  d.fhs_at_fraction = result.fhs_at_10pct;

  const double horizon = fraction * static_cast<double>(result.total_steps);
  std::vector<std::pair<double, double>> series;
  for (const auto& r : result.trajectory) {
    if (static_cast<double>(r.step) > horizon + 1e-9) break;
    series.emplace_back(static_cast<double>(r.step) / static_cast<double>(result.total_steps),
                        r.task_loss);
  }
  if (series.size() >= 4) {
    const ValLossVerdict v = val_loss_failure_predictor(series);
    d.val_loss_score = v.score;
    d.val_loss_flag = v.predicts_failure;
  } else {
    // Diverged before the horizon: the loss monitor has seen the blow-up.
    d.val_loss_score = 1.0;
    d.val_loss_flag = true;
  }

  const TrajectoryRecord& at = nearest_record(result.trajectory, result.total_steps, fraction);
  d.cosine_at_fraction = at.cosine_mean;
  d.entropy_at_fraction = at.routing_entropy;
  d.grad_norm_at_fraction = at.router_grad_norm;
  d.overlap_at_fraction = at.expert_overlap;
  d.imbalance_at_fraction = at.load_imbalance;

  const TrajectoryRecord& last = result.trajectory.back();
  d.final_fsi = last.fsi;
  d.final_fsi_normalized = last.fsi_normalized;
  d.final_fhs = last.fhs;
  d.final_accuracy = result.final_accuracy;
  d.optimal_accuracy = result.optimal_accuracy;
  d.failed = result.failed;
  d.failure_reason = result.failure_reason.empty() ? "none" : result.failure_reason;
  return d;
}

const std::vector<std::string>& digest_columns() {
  static const std::vector<std::string> columns = {
      "run_id",          "index",          "campaign_seed",    "seed",
      "lambda",          "eta",            "init_scale",       "separation_label",
      "separation",      "n_experts",      "fhs_at_fraction",  "val_loss_score",
      "val_loss_flag",   "cosine_at_fraction", "entropy_at_fraction", "grad_norm_at_fraction",
      "overlap_at_fraction", "imbalance_at_fraction", "final_fsi", "final_fsi_normalized",
      "final_fhs",       "final_accuracy", "optimal_accuracy", "failed",
      "failure_reason"};
  return columns;
}

std::vector<std::string> digest_cells(const RunDigest& d) {
  return {d.run_id,
          fmt::format("{}", d.index),
          fmt::format("{}", d.campaign_seed),
          fmt::format("{}", d.seed),
          draw_cell(d.draw.lambda),
          draw_cell(d.draw.eta),
          draw_cell(d.draw.init_scale),
          d.draw.separation_label,
          draw_cell(d.draw.separation),
          fmt::format("{}", d.draw.n_experts),
          format_real(d.fhs_at_fraction),
          format_real(d.val_loss_score),
          d.val_loss_flag ? "true" : "false",
          format_real(d.cosine_at_fraction),
          format_real(d.entropy_at_fraction),
          format_real(d.grad_norm_at_fraction),
          format_real(d.overlap_at_fraction),
          format_real(d.imbalance_at_fraction),
          format_real(d.final_fsi),
          format_real(d.final_fsi_normalized),
          format_real(d.final_fhs),
          format_real(d.final_accuracy),
          format_real(d.optimal_accuracy),
          d.failed ? "true" : "false",
          d.failure_reason};
}

std::vector<RunDigest> parse_digest_csv(const std::string& text) {
  const CsvTable t = parse_csv(text, digest_columns());
  std::vector<RunDigest> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    RunDigest d;
    d.run_id = row[t.column("run_id")];
    d.index = static_cast<int>(parse_real_cell(t, i, "index"));
    d.campaign_seed = std::stoull(row[t.column("campaign_seed")]);
    d.seed = std::stoull(row[t.column("seed")]);
    d.draw.index = d.index;
    d.draw.lambda = parse_real_cell(t, i, "lambda");
    d.draw.eta = parse_real_cell(t, i, "eta");
    d.draw.init_scale = parse_real_cell(t, i, "init_scale");
    d.draw.separation_label = row[t.column("separation_label")];
    d.draw.separation = parse_real_cell(t, i, "separation");
    d.draw.n_experts = static_cast<int>(parse_real_cell(t, i, "n_experts"));
    d.fhs_at_fraction = parse_real_cell(t, i, "fhs_at_fraction");
    d.val_loss_score = parse_real_cell(t, i, "val_loss_score");
    d.val_loss_flag = parse_bool_cell(t, i, "val_loss_flag");
    d.cosine_at_fraction = parse_real_cell(t, i, "cosine_at_fraction");
    d.entropy_at_fraction = parse_real_cell(t, i, "entropy_at_fraction");
    d.grad_norm_at_fraction = parse_real_cell(t, i, "grad_norm_at_fraction");
    d.overlap_at_fraction = parse_real_cell(t, i, "overlap_at_fraction");
    d.imbalance_at_fraction = parse_real_cell(t, i, "imbalance_at_fraction");
    d.final_fsi = parse_real_cell(t, i, "final_fsi");
    d.final_fsi_normalized = parse_real_cell(t, i, "final_fsi_normalized");
    d.final_fhs = parse_real_cell(t, i, "final_fhs");
    d.final_accuracy = parse_real_cell(t, i, "final_accuracy");
    d.optimal_accuracy = parse_real_cell(t, i, "optimal_accuracy");
    d.failed = parse_bool_cell(t, i, "failed");
    d.failure_reason = row[t.column("failure_reason")];
    out.push_back(d);
  }
  return out;
}

std::vector<PredictionScore> fhs_scores(const std::vector<RunDigest>& runs) {
  std::vector<PredictionScore> out;
  for (const auto& r : runs) out.push_back({r.run_id, r.fhs_at_fraction, r.failed});
  return out;
}

std::vector<PredictionScore> val_loss_scores(const std::vector<RunDigest>& runs) {
  std::vector<PredictionScore> out;
  for (const auto& r : runs) out.push_back({r.run_id, r.val_loss_score, r.failed});
  return out;
}

CampaignSummary summarize_campaign(std::vector<RunDigest> runs,
                                   const std::vector<double>& thresholds) {
  CampaignSummary s;
  s.runs = std::move(runs);
  for (const auto& r : s.runs) s.failures += r.failed ? 1 : 0;
  if (s.runs.empty() || s.failures == 0 || s.failures == static_cast<int>(s.runs.size())) {
    throw DegenerateCampaignError(fmt::format(
        "degenerate campaign: {} of {} runs failed; failure prediction needs both outcomes",
        s.failures, s.runs.size()));
  }
  const auto fhs = fhs_scores(s.runs);
  s.auc_fhs = auc(fhs);
  s.auc_val_loss = auc(val_loss_scores(s.runs));
  s.threshold_reports = threshold_sweep(fhs, thresholds);

  std::vector<double> accuracy;
  std::vector<double> final_fsi;
  std::vector<double> fhs_values;
  for (const auto& r : s.runs) {
    accuracy.push_back(r.final_accuracy);
    final_fsi.push_back(r.final_fsi);
    fhs_values.push_back(r.fhs_at_fraction);
  }
  s.corr_final_fsi_accuracy = pearson(final_fsi, accuracy);
  s.corr_fhs_accuracy = pearson(fhs_values, accuracy);

  struct Metric {
    const char* name;
    const char* orientation;
    double sign;
    double RunDigest::*field;
  };
  const Metric metrics[] = {
      {"fhs", "+fhs", 1.0, &RunDigest::fhs_at_fraction},
      {"cosine_similarity", "+mean pairwise cosine", 1.0, &RunDigest::cosine_at_fraction},
      {"routing_entropy", "-entropy of the marginal", -1.0, &RunDigest::entropy_at_fraction},
      {"gradient_norm", "+router gradient norm", 1.0, &RunDigest::grad_norm_at_fraction},
      {"expert_overlap", "+mean pairwise |cosine|", 1.0, &RunDigest::overlap_at_fraction},
      {"load_imbalance", "+coefficient of variation", 1.0, &RunDigest::imbalance_at_fraction},
      {"val_loss", "+early-stopping score", 1.0, &RunDigest::val_loss_score},
  };
  for (const auto& m : metrics) {
    std::vector<PredictionScore> scores;
    std::vector<double> raw;
    for (const auto& r : s.runs) {
      scores.push_back({r.run_id, m.sign * (r.*m.field), r.failed});
      raw.push_back(r.*m.field);
    }
    s.baselines.push_back({m.name, m.orientation, auc(scores), pearson(raw, accuracy)});
  }
  return s;
}

std::vector<RunDigest> failure_study_runs(const ExperimentConfig& config) {
  config.validate();
  const auto draws = draw_lottery(config, config.campaign.runs);
  const int total = static_cast<int>(draws.size() * config.campaign.seeds.size());
  const double fraction = config.campaign.fhs_fraction;
  auto digests = run_indexed<RunDigest>(total, config.campaign.parallel, [&](int k) {
    const LotteryDraw& draw = draws[static_cast<std::size_t>(k / static_cast<int>(
                                                                 config.campaign.seeds.size()))];
    const std::uint64_t cseed =
        config.campaign.seeds[static_cast<std::size_t>(k) % config.campaign.seeds.size()];
    const RunResult r =
        run_training_with_diagnostics(apply_draw(config, draw), run_seed(cseed, draw.index));
    return digest_run(r, draw.index, cseed, draw, fraction);
  });
  return digests;
}

CampaignSummary failure_study(const ExperimentConfig& config) {
  return summarize_campaign(failure_study_runs(config), config.campaign.thresholds);
}

InterventionStudy intervention_study(const ExperimentConfig& config) {
  config.validate();
  const int max_draws = config.campaign.max_runs;
  const auto draws = draw_lottery(config, max_draws);
  const std::uint64_t cseed = config.campaign.seeds.front();
  const double fraction = config.campaign.fhs_fraction;
  const int batch = std::max(1, config.campaign.parallel > 0 ? config.campaign.parallel
                                                             : omp_get_max_threads());

  InterventionStudy study;
  study.control_identical = true;
  for (int start = 0; start < max_draws &&
                      static_cast<int>(study.flagged.size()) < config.campaign.min_flagged;
       start += batch) {
    const int count = std::min(batch, max_draws - start);
    auto results = run_indexed<std::optional<FlaggedRun>>(
        count, config.campaign.parallel, [&](int k) -> std::optional<FlaggedRun> {
          const LotteryDraw& draw = draws[static_cast<std::size_t>(start + k)];
          const ExperimentConfig c = apply_draw(config, draw);
          const std::uint64_t seed = run_seed(cseed, draw.index);
          TrainingSession session(c, seed);
          const long branch_step =
              std::lround(fraction * static_cast<double>(session.total_steps()));
          session.run_until(branch_step);
          if (session.diverged()) return std::nullopt;
          const TrajectoryRecord& at =
              nearest_record(session.trajectory(), session.total_steps(), fraction);
          if (!(at.fhs > 1.0)) return std::nullopt;

          FlaggedRun f;
          std::vector<RunResult> arms;
          arms.push_back(TrainingSession(session).finish());
          for (int arm = 1; arm < 4; ++arm) {
            TrainingSession branch(session);
            Rng rng = make_stream(seed, StreamPurpose::kIntervention);
            MoEModelState m = arm == 3 ? reinit_all(branch.model(), c.model.init_scale, rng)
                                       : reinit_experts_keep_router(branch.model(), rng, arm == 2);
            branch.replace_model(std::move(m));
            arms.push_back(branch.finish());
          }
          const RunResult unbranched = run_training_with_diagnostics(c, seed);
          f.digest = digest_run(unbranched, draw.index, cseed, draw, fraction);
          f.control_identical =
              dump_json(run_result_json(arms[0])) == dump_json(run_result_json(unbranched)) &&
              trajectory_csv(arms[0].trajectory) == trajectory_csv(unbranched.trajectory);
          for (const auto& r : arms) {
            f.arm_accuracy.push_back(r.final_accuracy);
            f.arm_recovered.push_back(!r.failed);
          }
          return f;
        });
    study.draws_examined = start + count;
    for (auto& r : results) {
      if (!r) continue;
      if (static_cast<int>(study.flagged.size()) >= config.campaign.min_flagged) break;
      study.control_identical = study.control_identical && r->control_identical;
      study.flagged.push_back(std::move(*r));
      study.draws_examined = study.flagged.back().digest.index + 1;
    }
  }
  if (study.flagged.empty()) {
    throw DegenerateCampaignError(fmt::format(
        "degenerate campaign: no run among {} draws had FHS > 1 at {:.0f}% of training",
        study.draws_examined, 100.0 * fraction));
  }
  for (std::size_t a = 0; a < intervention_arms().size(); ++a) {
    ArmOutcome o;
    o.arm = intervention_arms()[a];
    std::vector<double> acc;
    for (const auto& f : study.flagged) {
      ++o.runs;
      o.recovered += f.arm_recovered[a] ? 1 : 0;
      acc.push_back(f.arm_accuracy[a]);
    }
    o.recovery_rate = static_cast<double>(o.recovered) / static_cast<double>(o.runs);
    o.mean_final_accuracy = mean(acc);
    study.arms.push_back(o);
  }
  return study;
}

nlohmann::ordered_json summary_json(const CampaignSummary& s) {
  nlohmann::ordered_json j;
  j["runs"] = s.runs.size();
  j["failures"] = s.failures;
  j["auc_fhs"] = s.auc_fhs;
  j["auc_val_loss"] = s.auc_val_loss;
  j["corr_final_fsi_accuracy"] = s.corr_final_fsi_accuracy;
  j["corr_fhs_accuracy"] = s.corr_fhs_accuracy;
  j["baselines"] = nlohmann::ordered_json::array();
  for (const auto& b : s.baselines) {
    j["baselines"].push_back({{"metric", b.metric},
                              {"orientation", b.orientation},
                              {"auc", b.auc},
                              {"corr_with_accuracy", b.corr_with_accuracy}});
  }
  j["threshold_reports"] = nlohmann::ordered_json::array();
  for (const auto& t : s.threshold_reports) {
    j["threshold_reports"].push_back({{"threshold", t.threshold},
                                      {"precision", t.precision},
                                      {"recall", t.recall},
                                      {"f1", t.f1},
                                      {"precision_undefined", t.precision_undefined}});
  }
  j["digests"] = nlohmann::ordered_json::array();
  for (const auto& r : s.runs) {
    j["digests"].push_back({{"run_id", r.run_id},
                            {"fhs_at_fraction", r.fhs_at_fraction},
                            {"val_loss_score", r.val_loss_score},
                            {"final_accuracy", r.final_accuracy},
                            {"failed", r.failed}});
  }
  return j;
}

nlohmann::ordered_json intervention_json(const InterventionStudy& s) {
  nlohmann::ordered_json j;
  j["flagged_runs"] = s.flagged.size();
  j["draws_examined"] = s.draws_examined;
  j["control_identical"] = s.control_identical;
  j["arms"] = nlohmann::ordered_json::array();
  for (const auto& a : s.arms) {
    j["arms"].push_back({{"arm", a.arm},
                         {"runs", a.runs},
                         {"recovered", a.recovered},
                         {"recovery_rate", a.recovery_rate},
                         {"mean_final_accuracy", a.mean_final_accuracy}});
  }
  j["flagged"] = nlohmann::ordered_json::array();
  for (const auto& f : s.flagged) {
    nlohmann::ordered_json row;
    row["run_id"] = f.digest.run_id;
    row["fhs_at_fraction"] = f.digest.fhs_at_fraction;
    row["arm_accuracy"] = f.arm_accuracy;
    row["arm_recovered"] = f.arm_recovered;
    row["control_identical"] = f.control_identical;
    j["flagged"].push_back(row);
  }
  return j;
}

std::string threshold_csv(const std::vector<ThresholdReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& t : reports) {
    rows.push_back({format_real(t.threshold), format_real(t.precision), format_real(t.recall),
                    format_real(t.f1), t.precision_undefined ? "true" : "false",
                    fmt::format("{}", t.true_positives), fmt::format("{}", t.false_positives),
                    fmt::format("{}", t.false_negatives), fmt::format("{}", t.true_negatives)});
  }
  return to_csv({"threshold", "precision", "recall", "f1", "precision_undefined",
                 "true_positives", "false_positives", "false_negatives", "true_negatives"},
                rows);
}

std::string geodesic_table_csv(const std::vector<GeodesicValidationRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({format_real(r.tau), format_real(r.measured_fraction),
                     format_real(r.bound_fraction), fmt::format("{}", r.steps),
                     fmt::format("{}", r.violations), format_real(r.max_ratio)});
  }
  return to_csv({"tau", "measured_fraction", "bound_fraction", "steps", "violations",
                 "max_ratio"},
                cells);
}

}  // namespace fisher_moe
