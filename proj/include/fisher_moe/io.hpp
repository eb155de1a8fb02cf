// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Output files. Every file is written to a temporary sibling and renamed into
// place, and one process at a time owns an output directory through a lock
// file. Reals are printed with 17 significant digits, so outputs are
// byte-stable and parse back to the same doubles.

#pragma once

#include "fisher_moe/diagnostics.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace fisher_moe {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Another process owns the output directory.
class LockHeldError : public IoError {
 public:
  using IoError::IoError;
};

inline constexpr const char* kLockFileName = ".fisher-moe.lock";

/// Creates `dir` if needed and holds its lock file until destruction.
/// Throws IoError when another process already holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path lock_path_;
};

void atomic_write(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

std::string format_real(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column; throws IoError when absent.
  std::size_t column(const std::string& name) const;
  double real(std::size_t row, const std::string& name) const;
};

/// Writes a header line and one line per row; cells must not contain commas
/// or newlines.
std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows);

/// Strict reader: rejects ragged rows, empty input and, when
/// `expected_header` is non-empty, a header that differs from it.
CsvTable parse_csv(const std::string& text, const std::vector<std::string>& expected_header = {});

std::string trajectory_csv(const std::vector<TrajectoryRecord>& records);
std::vector<TrajectoryRecord> parse_trajectory_csv(const std::string& text);

std::string geodesic_csv(const std::vector<GeodesicStep>& steps);

/// Config as {section: {key: value}} with every value as written in the file.
nlohmann::ordered_json config_json(const ExperimentConfig& config);

nlohmann::ordered_json run_result_json(const RunResult& result);

std::string dump_json(const nlohmann::ordered_json& j);

}  // namespace fisher_moe
