// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Markdown summary of an output directory, with the monitoring checklist
// evaluated per run.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace fisher_moe {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kFsiTargetFraction = 0.6;
inline constexpr double kFhsWarningThreshold = 1.0;

/// Checklist lines for one run.
std::string run_checklist(const std::string& run_id, double final_fsi_normalized,
                          double fhs_at_10pct, double lambda);

/// Throws ReportError when the directory holds no recognized artifacts.
std::string build_report(const std::filesystem::path& dir);

}  // namespace fisher_moe
