// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/report.hpp"

#include "fisher_moe/campaign.hpp"
#include "fisher_moe/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <vector>

namespace fisher_moe {

namespace fs = std::filesystem;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

double number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw ReportError(fmt::format("artifact is missing numeric field '{}'", key));
  }
  return j[key].get<double>();
}

double config_lambda(const nlohmann::json& run) {
  try {
    return std::stod(run.at("config").at("model").at("lambda").get<std::string>());
  } catch (const std::exception&) {
    throw ReportError("run artifact has no config.model.lambda");
  }
}

}  // namespace

std::string run_checklist(const std::string& run_id, double final_fsi_normalized,
                          double fhs_at_10pct, double lambda) {
  std::string out = fmt::format("### {}\n\n", run_id);
  if (final_fsi_normalized > kFsiTargetFraction) {
    out += fmt::format("1. FSI target met: final FSI / FSI_max = {:.3f} > {:.1f}.\n",
                       final_fsi_normalized, kFsiTargetFraction);
  } else {
    out += fmt::format(
        "1. FSI target not met: final FSI / FSI_max = {:.3f} <= {:.1f}; an early plateau "
        "signals under-differentiation.\n",
        final_fsi_normalized, kFsiTargetFraction);
  }
  const bool flagged = fhs_at_10pct > kFhsWarningThreshold;
  if (flagged) {
    out += fmt::format("2. FHS at 10% of training = {:.3f} > 1.0: flagged.\n", fhs_at_10pct);
    out += fmt::format(
        "3. Recommended intervention: reinitialize the expert weights (Xavier), keep the router "
        "weights, reduce lambda by 50% (to {}), and resume training.\n",
        0.5 * lambda);
  } else {
    out += fmt::format("2. FHS at 10% of training = {:.3f} <= 1.0: no intervention needed.\n",
                       fhs_at_10pct);
    out += "3. No intervention.\n";
  }
  out += fmt::format(
      "4. Lambda = {}: a higher lambda lowers the equilibrium FSI; lower it if FSI plateaus "
      "below target.\n\n",
      lambda);
  return out;
}

std::string build_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw ReportError(fmt::format("{} is not a directory", dir.string()));
  }
  std::string runs_section;
  std::string campaign_section;
  int artifacts = 0;
  for (const auto& path : sorted_files(dir)) {
    const std::string name = path.filename().string();
    if (ends_with(name, ".run.json")) {
      const auto j = nlohmann::json::parse(read_file(path));
      const std::string run_id = j.at("run_id").get<std::string>();
      runs_section += run_checklist(run_id, number(j, "final_fsi_normalized"),
                                    number(j, "fhs_at_10pct"), config_lambda(j));
      runs_section += fmt::format(
          "Final accuracy {:.4f} of optimal {:.4f}: {}.\n\n", number(j, "final_accuracy"),
          number(j, "optimal_accuracy"),
          j.at("failed").get<bool>()
              ? fmt::format("failed ({})", j.at("failure_reason").get<std::string>())
              : std::string("healthy"));
      ++artifacts;
    } else if (name == "failure_study.json") {
      const auto j = nlohmann::json::parse(read_file(path));
      campaign_section += "## Failure prediction\n\n";
      campaign_section += fmt::format("Runs: {}, failed: {}.\n\n", j.at("runs").get<int>(),
                                      j.at("failures").get<int>());
      campaign_section += "| metric | orientation | AUC | corr. with accuracy |\n|---|---|---|---|\n";
      for (const auto& b : j.at("baselines")) {
        campaign_section += fmt::format("| {} | {} | {:.3f} | {:.3f} |\n",
                                        b.at("metric").get<std::string>(),
                                        b.at("orientation").get<std::string>(),
                                        b.at("auc").get<double>(),
                                        b.at("corr_with_accuracy").get<double>());
      }
      campaign_section += "\n| FHS threshold | precision | recall | F1 |\n|---|---|---|---|\n";
      for (const auto& t : j.at("threshold_reports")) {
        campaign_section += fmt::format(
            "| {} | {:.3f}{} | {:.3f} | {:.3f} |\n", t.at("threshold").get<double>(),
            t.at("precision").get<double>(),
            t.at("precision_undefined").get<bool>() ? " (undefined)" : "",
            t.at("recall").get<double>(), t.at("f1").get<double>());
      }
      campaign_section += "\n";
      ++artifacts;
    } else if (name == "failure_study_runs.csv") {
      const auto digests = parse_digest_csv(read_file(path));
      int flagged = 0;
      int target = 0;
      for (const auto& d : digests) {
        flagged += d.fhs_at_fraction > kFhsWarningThreshold ? 1 : 0;
        target += d.final_fsi_normalized > kFsiTargetFraction ? 1 : 0;
      }
      campaign_section += fmt::format(
          "Checklist over {} campaign runs: FSI target met in {}, FHS > 1 at 10% in {}.\n\n",
          digests.size(), target, flagged);
      ++artifacts;
    } else if (name == "intervention_study.json") {
      const auto j = nlohmann::json::parse(read_file(path));
      campaign_section += fmt::format("## Interventions\n\nFlagged runs: {} of {} examined.\n\n",
                                      j.at("flagged_runs").get<int>(),
                                      j.at("draws_examined").get<int>());
      campaign_section += "| arm | recovery rate | mean final accuracy |\n|---|---|---|\n";
      for (const auto& a : j.at("arms")) {
        campaign_section += fmt::format("| {} | {:.3f} | {:.4f} |\n", a.at("arm").get<std::string>(),
                                        a.at("recovery_rate").get<double>(),
                                        a.at("mean_final_accuracy").get<double>());
      }
      campaign_section += "\n";
      ++artifacts;
    } else if (name == "geodesic_validation.csv") {
      const CsvTable t = parse_csv(read_file(path));
      campaign_section += "## Geodesic deviation\n\n| tau | measured | bound | violations |\n|---|---|---|---|\n";
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        campaign_section += fmt::format("| {} | {:.5f} | {:.5f} | {} of {} |\n", t.real(i, "tau"),
                                        t.real(i, "measured_fraction"), t.real(i, "bound_fraction"),
                                        t.rows[i][t.column("violations")],
                                        t.rows[i][t.column("steps")]);
      }
      campaign_section += "\n";
      ++artifacts;
    } else if (name == "invariance.json") {
      const auto j = nlohmann::json::parse(read_file(path));
      campaign_section += fmt::format(
          "## Invariance\n\nCosine {:.5f} -> {:.5f}; entropy change {:.5f} nats; Fisher-Rao "
          "invariance {}.\n\n",
          j.at("cosine").at("before").get<double>(), j.at("cosine").at("after").get<double>(),
          j.at("entropy").at("change_nats").get<double>(),
          j.at("fisher_rao").at("invariant").get<bool>() ? "pass" : "fail");
      ++artifacts;
    }
  }
  if (artifacts == 0) {
    throw ReportError(fmt::format("{} contains no run or campaign artifacts", dir.string()));
  }
  std::string out = "# fisher-moe report\n\n";
  out += campaign_section;
  if (!runs_section.empty()) out += "## Runs\n\n" + runs_section;
  return out;
}

}  // namespace fisher_moe
