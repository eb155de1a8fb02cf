// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/io.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fisher_moe {

namespace fs = std::filesystem;

DirectoryLock::DirectoryLock(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir.string(),
                                    ec.message()));
  lock_path_ = dir / kLockFileName;
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const int err = errno;
    lock_path_.clear();
    if (err == EEXIST) {
      throw LockHeldError(fmt::format("output directory {} is locked by another process ({} exists)",
                                dir.string(), kLockFileName));
    }
    throw IoError(fmt::format("cannot create lock file in {}: {}", dir.string(),
                              std::strerror(err)));
  }
  const std::string pid = fmt::format("{}\n", ::getpid());
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  if (lock_path_.empty()) return;
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + fmt::format(".tmp.{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", tmp.string()));
    out << content;
    out.flush();
    if (!out) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(fmt::format("cannot move {} into place", path.string()));
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string format_real(double v) { return fmt::format("{:.17g}", v); }

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError(fmt::format("csv has no column '{}'", name));
}

double CsvTable::real(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(column(name));
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw IoError(fmt::format("csv row {} column '{}': '{}' is not a number", row + 2, name, cell));
  }
  return v;
}

std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  std::string out = fmt::format("{}\n", fmt::join(header, ","));
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw IoError("to_csv: ragged row");
    out += fmt::format("{}\n", fmt::join(row, ","));
  }
  return out;
}

CsvTable parse_csv(const std::string& text, const std::vector<std::string>& expected_header) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream cs(s);
    while (std::getline(cs, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      table.header = split(line);
      if (table.header.empty()) throw IoError("csv: empty header");
      if (!expected_header.empty() && table.header != expected_header) {
        throw IoError(fmt::format("csv: header does not match schema (got '{}')", line));
      }
      continue;
    }
    if (line.empty()) throw IoError(fmt::format("csv line {}: empty row", line_no));
    auto cells = split(line);
    if (cells.size() != table.header.size()) {
      throw IoError(fmt::format("csv line {}: {} cells, header has {}", line_no, cells.size(),
                                table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  if (line_no == 0) throw IoError("csv: empty input");
  return table;
}

std::string trajectory_csv(const std::vector<TrajectoryRecord>& records) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    std::vector<std::string> row;
    const auto values = trajectory_values(r);
    row.push_back(fmt::format("{}", r.step));
    for (std::size_t i = 1; i < values.size(); ++i) row.push_back(format_real(values[i]));
    rows.push_back(std::move(row));
  }
  return to_csv(trajectory_columns(), rows);
}

std::vector<TrajectoryRecord> parse_trajectory_csv(const std::string& text) {
  const CsvTable t = parse_csv(text, trajectory_columns());
  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    TrajectoryRecord r;
    r.step = static_cast<long>(t.real(i, "step"));
    r.fsi = t.real(i, "fsi");
    r.fsi_normalized = t.real(i, "fsi_normalized");
    r.fhs = t.real(i, "fhs");
    r.h_frob = t.real(i, "h_frob");
    r.task_loss = t.real(i, "task_loss");
    r.accuracy = t.real(i, "accuracy");
    r.router_grad_norm = t.real(i, "router_grad_norm");
    r.per_step_geodesic_deviation = t.real(i, "per_step_geodesic_deviation");
    r.per_step_geodesic_bound = t.real(i, "per_step_geodesic_bound");
    r.cosine_mean = t.real(i, "cosine_mean");
    r.routing_entropy = t.real(i, "routing_entropy");
    r.load_imbalance = t.real(i, "load_imbalance");
    r.expert_overlap = t.real(i, "expert_overlap");
    r.gradient_norm = t.real(i, "gradient_norm");
    out.push_back(r);
  }
  return out;
}

std::string geodesic_csv(const std::vector<GeodesicStep>& steps) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(steps.size());
  for (const auto& g : steps) {
    rows.push_back({fmt::format("{}", g.step), format_real(g.deviation), format_real(g.bound),
                    format_real(g.fr_displacement), format_real(g.fsi_after)});
  }
  return to_csv({"step", "deviation", "bound", "fr_displacement", "fsi_after"}, rows);
}

nlohmann::ordered_json config_json(const ExperimentConfig& config) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  std::istringstream in(serialize_config(config));
  std::string line;
  std::string section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      j[section] = nlohmann::ordered_json::object();
      continue;
    }
    const auto eq = line.find(" = ");
    const std::string key = line.substr(0, eq);
    const std::string value = eq + 3 <= line.size() ? line.substr(eq + 3) : "";
    if (section.empty()) {
      j[key] = value;
    } else {
      j[section][key] = value;
    }
  }
  return j;
}

nlohmann::ordered_json run_result_json(const RunResult& result) {
  nlohmann::ordered_json j;
  j["run_id"] = result.run_id;
  j["seed"] = result.seed;
  j["total_steps"] = result.total_steps;
  j["final_accuracy"] = result.final_accuracy;
  j["optimal_accuracy"] = result.optimal_accuracy;
  j["optimal_accuracy_std_error"] = result.optimal_accuracy_std_error;
  j["failed"] = result.failed;
  j["failure_reason"] = result.failure_reason;
  j["fhs_at_10pct"] = result.fhs_at_10pct;
  if (!result.trajectory.empty()) {
    const auto& last = result.trajectory.back();
    j["final_fsi"] = last.fsi;
    j["final_fsi_normalized"] = last.fsi_normalized;
    j["final_fhs"] = last.fhs;
  }
  j["checkpoints"] = result.trajectory.size();
  if (!result.geodesic_steps.empty()) {
    const GeodesicValidationRow g = summarize_geodesic(result);
    j["geodesic"] = {{"steps", g.steps},
                     {"violations", g.violations},
                     {"measured_fraction", g.measured_fraction},
                     {"bound_fraction", g.bound_fraction},
                     {"max_ratio", g.max_ratio}};
  }
  j["config"] = config_json(result.config);
  return j;
}

std::string dump_json(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace fisher_moe
