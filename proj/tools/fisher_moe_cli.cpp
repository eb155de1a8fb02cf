// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// fisher-moe: single runs, campaigns and reports.
//
// Exit codes: 0 success, 2 usage or config error, 3 degenerate campaign,
// 4 internal error.

#include "fisher_moe/baselines.hpp"
#include "fisher_moe/campaign.hpp"
#include "fisher_moe/config.hpp"
#include "fisher_moe/diagnostics.hpp"
#include "fisher_moe/io.hpp"
#include "fisher_moe/report.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace fisher_moe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitInternal = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::string thresholds;
  std::string campaign_csv;
  std::optional<int> parallel;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig config = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  apply_seed_override(config);
  try {
    if (!o.seeds.empty()) config.campaign.seeds = parse_seed_list(o.seeds);
    if (!o.thresholds.empty()) config.campaign.thresholds = parse_real_list(o.thresholds);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.parallel) config.campaign.parallel = *o.parallel;
  if (!o.out_dir.empty()) config.output_dir = o.out_dir;
  config.validate();
  return config;
}

void write_config_echo(const fs::path& dir, const ExperimentConfig& config) {
  atomic_write(dir / "config.ini", serialize_config(config));
}

int cmd_simulate(const Options& o) {
  const ExperimentConfig config = resolve_config(o);
  const fs::path dir = config.output_dir;
  DirectoryLock lock(dir);
  write_config_echo(dir, config);
  for (const std::uint64_t seed : config.campaign.seeds) {
    const RunResult r = run_training_with_diagnostics(config, seed);
    atomic_write(dir / (r.run_id + ".trajectory.csv"), trajectory_csv(r.trajectory));
    if (!r.geodesic_steps.empty()) {
      atomic_write(dir / (r.run_id + ".geodesic.csv"), geodesic_csv(r.geodesic_steps));
    }
    atomic_write(dir / (r.run_id + ".run.json"), dump_json(run_result_json(r)));
    const auto& last = r.trajectory.back();
    fmt::print("{}: steps {}, FSI/FSI_max {:.4f}, FHS@{:g} {:.4f}, accuracy {:.4f} of {:.4f}{}\n",
               r.run_id, last.step, last.fsi_normalized, config.campaign.fhs_fraction,
               r.fhs_at_10pct, r.final_accuracy, r.optimal_accuracy,
               r.failed ? fmt::format(" [failed: {}]", r.failure_reason) : std::string());
  }
  return kExitOk;
}

void print_summary(const CampaignSummary& s) {
  fmt::print("runs {}, failed {}\n", s.runs.size(), s.failures);
  fmt::print("AUC FHS {:.4f}, AUC validation loss {:.4f}\n", s.auc_fhs, s.auc_val_loss);
  fmt::print("corr(final FSI, accuracy) {:.4f}, corr(FHS, accuracy) {:.4f}\n",
             s.corr_final_fsi_accuracy, s.corr_fhs_accuracy);
  for (const auto& t : s.threshold_reports) {
    fmt::print("threshold {:g}: precision {:.3f}{} recall {:.3f} F1 {:.3f}\n", t.threshold,
               t.precision, t.precision_undefined ? " (undefined)" : "", t.recall, t.f1);
  }
}

std::string digests_csv(const std::vector<RunDigest>& runs) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(runs.size());
  for (const auto& r : runs) rows.push_back(digest_cells(r));
  return to_csv(digest_columns(), rows);
}

int cmd_failure_study(const Options& o) {
  const ExperimentConfig config = resolve_config(o);
  const fs::path dir = config.output_dir;
  DirectoryLock lock(dir);
  write_config_echo(dir, config);
  auto runs = failure_study_runs(config);
  // The scatter data is kept even when the campaign turns out degenerate.
  atomic_write(dir / "failure_study_runs.csv", digests_csv(runs));
  const CampaignSummary s = summarize_campaign(std::move(runs), config.campaign.thresholds);
  atomic_write(dir / "failure_study.json", dump_json(summary_json(s)));
  atomic_write(dir / "thresholds.csv", threshold_csv(s.threshold_reports));
  print_summary(s);
  return kExitOk;
}

int cmd_threshold_sweep(const Options& o) {
  const ExperimentConfig config = resolve_config(o);
  const fs::path dir = config.output_dir;
  const fs::path input =
      o.campaign_csv.empty() ? dir / "failure_study_runs.csv" : fs::path(o.campaign_csv);
  if (!fs::exists(input)) {
    throw UsageError(fmt::format("campaign results {} not found; run failure-study first or "
                                 "pass --campaign",
                                 input.string()));
  }
  std::vector<RunDigest> runs;
  try {
    runs = parse_digest_csv(read_file(input));
  } catch (const IoError& e) {
    throw UsageError(fmt::format("{}: {}", input.string(), e.what()));
  }
  if (runs.size() < 2) {
    throw UsageError(fmt::format("{} holds {} run(s); a threshold sweep needs a campaign",
                                 input.string(), runs.size()));
  }
  DirectoryLock lock(dir);
  const CampaignSummary s = summarize_campaign(std::move(runs), config.campaign.thresholds);
  atomic_write(dir / "thresholds.csv", threshold_csv(s.threshold_reports));
  for (const auto& t : s.threshold_reports) {
    fmt::print("threshold {:g}: precision {:.3f}{} recall {:.3f} F1 {:.3f}\n", t.threshold,
               t.precision, t.precision_undefined ? " (undefined)" : "", t.recall, t.f1);
  }
  return kExitOk;
}

std::string intervention_csv(const InterventionStudy& s) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& a : s.arms) {
    rows.push_back({a.arm, fmt::format("{}", a.runs), fmt::format("{}", a.recovered),
                    format_real(a.recovery_rate), format_real(a.mean_final_accuracy)});
  }
  return to_csv({"arm", "runs", "recovered", "recovery_rate", "mean_final_accuracy"}, rows);
}

int cmd_intervention_study(const Options& o) {
  const ExperimentConfig config = resolve_config(o);
  const fs::path dir = config.output_dir;
  DirectoryLock lock(dir);
  write_config_echo(dir, config);
  const InterventionStudy s = intervention_study(config);
  atomic_write(dir / "intervention_study.json", dump_json(intervention_json(s)));
  atomic_write(dir / "intervention_arms.csv", intervention_csv(s));
  fmt::print("flagged runs {} of {} examined; control identical: {}\n", s.flagged.size(),
             s.draws_examined, s.control_identical ? "yes" : "no");
  for (const auto& a : s.arms) {
    fmt::print("{}: recovery {:.3f} ({} of {}), mean accuracy {:.4f}\n", a.arm, a.recovery_rate,
               a.recovered, a.runs, a.mean_final_accuracy);
  }
  return kExitOk;
}

int cmd_geodesic_validate(const Options& o) {
  const ExperimentConfig config = resolve_config(o);
  if (config.model.top_k != 0 && config.model.top_k < config.model.n_experts) {
    throw UsageError("geodesic validation requires dense routing (model.top_k = 0)");
  }
  const fs::path dir = config.output_dir;
  DirectoryLock lock(dir);
  write_config_echo(dir, config);
  const auto rows = geodesic_validation(config, config.campaign.taus);
  atomic_write(dir / "geodesic_validation.csv", geodesic_table_csv(rows));
  for (const auto& r : rows) {
    fmt::print("tau {:g}: measured {:.6f}, bound {:.6f}, violations {} of {}, max ratio {:.4f}\n",
               r.tau, r.measured_fraction, r.bound_fraction, r.violations, r.steps, r.max_ratio);
  }
  return kExitOk;
}

int cmd_invariance_demo(const Options& o) {
  const fs::path dir = o.out_dir.empty() ? fs::path(ExperimentConfig{}.output_dir) : fs::path(o.out_dir);
  DirectoryLock lock(dir);
  const InvarianceReport r = invariance_demonstration();
  atomic_write(dir / "invariance.json", invariance_report_json(r));
  const std::string text = invariance_report_text(r);
  atomic_write(dir / "invariance.txt", text);
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

int cmd_report(const Options& o) {
  const fs::path dir = o.out_dir.empty() ? fs::path(ExperimentConfig{}.output_dir) : fs::path(o.out_dir);
  std::string text;
  try {
    text = build_report(dir);
  } catch (const ReportError& e) {
    throw UsageError(e.what());
  }
  DirectoryLock lock(dir);
  atomic_write(dir / "report.md", text);
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const LockHeldError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const DegenerateCampaignError& e) {
    fmt::print(stderr, "degenerate campaign: {}\n", e.what());
    return kExitDegenerate;
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return kExitInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher-geometric diagnostics for mixture-of-experts routing"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("--config", o.config_path, "Experiment config file (defaults when omitted)")
          ->check(CLI::ExistingFile);
      sub->add_option("--seeds", o.seeds, "Comma-separated campaign seeds");
      sub->add_option("--parallel", o.parallel, "Concurrent runs (0: all hardware threads)")
          ->check(CLI::NonNegativeNumber);
      sub->add_option("--thresholds", o.thresholds, "Comma-separated FHS thresholds");
    }
    sub->add_option("--out", o.out_dir, "Output directory");
  };

  std::function<int()> action;
  auto bind = [&](CLI::App* sub, std::function<int(const Options&)> fn) {
    sub->callback([&action, &o, fn] { action = [&o, fn] { return fn(o); }; });
  };

  auto* simulate = app.add_subcommand("simulate", "Train one model per seed with diagnostics");
  add_common(simulate, true);
  bind(simulate, cmd_simulate);

  auto* failure = app.add_subcommand("failure-study", "Lottery campaign scored by FHS at 10%");
  add_common(failure, true);
  bind(failure, cmd_failure_study);

  auto* sweep = app.add_subcommand("threshold-sweep", "Precision, recall and F1 per FHS threshold");
  add_common(sweep, true);
  sweep->add_option("--campaign", o.campaign_csv,
                    "Per-run campaign CSV (default: <out>/failure_study_runs.csv)");
  bind(sweep, cmd_threshold_sweep);

  auto* intervention = app.add_subcommand("intervention-study", "Branch flagged runs into arms");
  add_common(intervention, true);
  bind(intervention, cmd_intervention_study);

  auto* geodesic = app.add_subcommand("geodesic-validate", "Per-step geodesic deviation vs bound");
  add_common(geodesic, true);
  bind(geodesic, cmd_geodesic_validate);

  auto* invariance = app.add_subcommand("invariance-demo", "Reparameterization counterexamples");
  add_common(invariance, false);
  bind(invariance, cmd_invariance_demo);

  auto* report = app.add_subcommand("report", "Summarize an output directory");
  add_common(report, false);
  report->add_option("dir", o.out_dir, "Output directory (alternative to --out)");
  bind(report, cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  return run_guarded(action);
}
