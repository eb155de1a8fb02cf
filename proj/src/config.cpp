// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/config.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fisher_moe {

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("{}:{}: {}", source, line, message)
                                  : fmt::format("{}: {}", source, message)),
      line(line) {}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

double to_real(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("expected a number, got an empty value");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v)) {
    throw std::invalid_argument(fmt::format("expected a finite number, got '{}'", text));
  }
  return v;
}

long to_integer(const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE) {
    throw std::invalid_argument(fmt::format("expected an integer, got '{}'", text));
  }
  return v;
}

std::uint64_t to_u64(const std::string& text) {
  errno = 0;
  char* end = nullptr;
  if (text.empty() || text.front() == '-') {
    throw std::invalid_argument(fmt::format("expected a non-negative integer, got '{}'", text));
  }
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (end != text.c_str() + text.size() || errno == ERANGE) {
    throw std::invalid_argument(fmt::format("expected a non-negative integer, got '{}'", text));
  }
  return v;
}

bool to_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw std::invalid_argument(fmt::format("expected true or false, got '{}'", text));
}

template <class T, class F>
std::vector<T> to_list(const std::string& text, F convert) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(convert(item));
  return out;
}

int to_int(const std::string& text) {
  const long v = to_integer(text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw std::invalid_argument(fmt::format("integer '{}' out of range", text));
  }
  return static_cast<int>(v);
}

std::string real(double v) { return fmt::format("{}", v); }

template <class T>
std::string join(const std::vector<T>& values) {
  std::vector<std::string> parts;
  for (const auto& v : values) parts.push_back(fmt::format("{}", v));
  return fmt::format("{}", fmt::join(parts, ", "));
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"output_dir", [](auto& c, const auto& v) { c.output_dir = v; }},

      {"task.layout", [](auto& c, const auto& v) { c.task.layout = parse_task_layout(v); }},
      {"task.n_clusters", [](auto& c, const auto& v) { c.task.n_clusters = to_int(v); }},
      {"task.input_dim", [](auto& c, const auto& v) { c.task.input_dim = to_int(v); }},
      {"task.n_classes", [](auto& c, const auto& v) { c.task.n_classes = to_int(v); }},
      {"task.separation", [](auto& c, const auto& v) { c.task.separation = to_real(v); }},
      {"task.covariance_scale",
       [](auto& c, const auto& v) { c.task.covariance_scale = to_real(v); }},
      {"task.task_seed", [](auto& c, const auto& v) { c.task.task_seed = to_u64(v); }},
      {"task.means",
       [](auto& c, const auto& v) {
         c.task.means.clear();
         if (trim(v).empty()) return;
         for (const auto& row : split(v, ';')) {
           c.task.means.push_back(to_list<double>(row, to_real));
         }
       }},
      {"task.mixture_weights",
       [](auto& c, const auto& v) { c.task.mixture_weights = to_list<double>(v, to_real); }},
      {"task.labels", [](auto& c, const auto& v) { c.task.labels = to_list<int>(v, to_int); }},

      {"model.n_experts", [](auto& c, const auto& v) { c.model.n_experts = to_int(v); }},
      {"model.tau", [](auto& c, const auto& v) { c.model.tau = to_real(v); }},
      {"model.top_k",
       [](auto& c, const auto& v) { c.model.top_k = v == "dense" ? 0 : to_int(v); }},
      {"model.lambda", [](auto& c, const auto& v) { c.model.lambda = to_real(v); }},
      {"model.init_scale", [](auto& c, const auto& v) { c.model.init_scale = to_real(v); }},
      {"model.expert_arch",
       [](auto& c, const auto& v) { c.model.expert_arch = parse_expert_arch(v); }},
      {"model.hidden", [](auto& c, const auto& v) { c.model.hidden = to_int(v); }},

      {"training.eta", [](auto& c, const auto& v) { c.training.eta = to_real(v); }},
      {"training.steps", [](auto& c, const auto& v) { c.training.steps = to_integer(v); }},
      {"training.batch_size", [](auto& c, const auto& v) { c.training.batch_size = to_int(v); }},
      {"training.optimizer",
       [](auto& c, const auto& v) { c.training.optimizer = parse_optimizer(v); }},

      {"diagnostics.checkpoint_fraction",
       [](auto& c, const auto& v) { c.diagnostics.checkpoint_fraction = to_real(v); }},
      {"diagnostics.fim_batch_size",
       [](auto& c, const auto& v) { c.diagnostics.fim_batch_size = to_int(v); }},
      {"diagnostics.probe_size",
       [](auto& c, const auto& v) { c.diagnostics.probe_size = to_int(v); }},
      {"diagnostics.eval_size",
       [](auto& c, const auto& v) { c.diagnostics.eval_size = to_int(v); }},
      {"diagnostics.bayes_samples",
       [](auto& c, const auto& v) { c.diagnostics.bayes_samples = to_int(v); }},
      {"diagnostics.track_geodesic",
       [](auto& c, const auto& v) { c.diagnostics.track_geodesic = to_bool(v); }},
      {"diagnostics.geodesic_probe_size",
       [](auto& c, const auto& v) { c.diagnostics.geodesic_probe_size = to_int(v); }},
      {"diagnostics.geodesic_normalizer",
       [](auto& c, const auto& v) { c.diagnostics.geodesic_normalizer = v; }},

      {"lottery.lambdas",
       [](auto& c, const auto& v) { c.lottery.lambdas = to_list<double>(v, to_real); }},
      {"lottery.etas",
       [](auto& c, const auto& v) { c.lottery.etas = to_list<double>(v, to_real); }},
      {"lottery.init_scales",
       [](auto& c, const auto& v) { c.lottery.init_scales = to_list<double>(v, to_real); }},
      {"lottery.n_experts",
       [](auto& c, const auto& v) { c.lottery.n_experts = to_list<int>(v, to_int); }},
      {"lottery.separation_low",
       [](auto& c, const auto& v) { c.lottery.separation_low = to_real(v); }},
      {"lottery.separation_high",
       [](auto& c, const auto& v) { c.lottery.separation_high = to_real(v); }},

      {"campaign.seeds",
       [](auto& c, const auto& v) { c.campaign.seeds = to_list<std::uint64_t>(v, to_u64); }},
      {"campaign.runs", [](auto& c, const auto& v) { c.campaign.runs = to_int(v); }},
      {"campaign.parallel", [](auto& c, const auto& v) { c.campaign.parallel = to_int(v); }},
      {"campaign.fhs_fraction",
       [](auto& c, const auto& v) { c.campaign.fhs_fraction = to_real(v); }},
      {"campaign.taus",
       [](auto& c, const auto& v) { c.campaign.taus = to_list<double>(v, to_real); }},
      {"campaign.thresholds",
       [](auto& c, const auto& v) { c.campaign.thresholds = to_list<double>(v, to_real); }},
      {"campaign.min_flagged",
       [](auto& c, const auto& v) { c.campaign.min_flagged = to_int(v); }},
      {"campaign.max_runs", [](auto& c, const auto& v) { c.campaign.max_runs = to_int(v); }},
  };
  return table;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("config", 0, message);
}

template <class T>
bool all_positive(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return x > 0; });
}

}  // namespace

void ExperimentConfig::validate() const {
  const int n = model.n_experts;
  require(n >= 2, "model.n_experts must be >= 2");
  require(task.input_dim >= 1, "task.input_dim must be >= 1");
  require(task.n_clusters >= 0, "task.n_clusters must be >= 0 (0: one per expert)");
  require(task.n_classes >= 0, "task.n_classes must be >= 0 (0: one per cluster)");
  require(task.separation >= 0.0, "task.separation must be >= 0");
  require(task.covariance_scale > 0.0, "task.covariance_scale must be > 0");
  if (!task.means.empty()) {
    require(task.means.size() >= 2, "task.means needs at least two clusters");
    for (const auto& m : task.means) {
      require(static_cast<int>(m.size()) == task.input_dim,
              "every row of task.means must have task.input_dim entries");
    }
    require(task.labels.size() == task.means.size(), "task.labels needs one label per mean");
    require(std::all_of(task.labels.begin(), task.labels.end(), [](int l) { return l >= 0; }),
            "task.labels must be non-negative");
    require(task.mixture_weights.empty() || task.mixture_weights.size() == task.means.size(),
            "task.mixture_weights needs one weight per mean");
  } else {
    require(task.labels.empty() && task.mixture_weights.empty(),
            "task.labels and task.mixture_weights need explicit task.means");
  }
  require(model.tau > 0.0, "model.tau must be > 0");
  require(model.top_k >= 0 && model.top_k <= n, "model.top_k must be in [0, n_experts]");
  require(model.lambda >= 0.0, "model.lambda must be >= 0");
  require(model.init_scale >= 0.0, "model.init_scale must be >= 0");
  require(model.expert_arch == ExpertArch::kLinear || model.hidden >= 1,
          "model.hidden must be >= 1 for mlp experts");
  require(training.eta >= 0.0, "training.eta must be >= 0");
  require(training.steps >= 1, "training.steps must be >= 1");
  require(training.batch_size >= 1, "training.batch_size must be >= 1");
  require(diagnostics.checkpoint_fraction > 0.0 && diagnostics.checkpoint_fraction <= 1.0,
          "diagnostics.checkpoint_fraction must be in (0, 1]");
  require(diagnostics.fim_batch_size >= 1, "diagnostics.fim_batch_size must be >= 1");
  require(diagnostics.probe_size >= 1, "diagnostics.probe_size must be >= 1");
  require(diagnostics.fim_batch_size <= diagnostics.probe_size,
          "diagnostics.fim_batch_size must not exceed diagnostics.probe_size");
  require(diagnostics.eval_size >= 1, "diagnostics.eval_size must be >= 1");
  require(diagnostics.bayes_samples >= 10000, "diagnostics.bayes_samples must be >= 10000");
  require(diagnostics.geodesic_probe_size >= 1, "diagnostics.geodesic_probe_size must be >= 1");
  require(diagnostics.geodesic_normalizer == "fisher_rao" ||
              diagnostics.geodesic_normalizer == "sphere",
          "diagnostics.geodesic_normalizer must be fisher_rao or sphere");
  require(!lottery.lambdas.empty() && !lottery.etas.empty() && !lottery.init_scales.empty() &&
              !lottery.n_experts.empty(),
          "lottery lists must be non-empty");
  require(std::all_of(lottery.lambdas.begin(), lottery.lambdas.end(),
                      [](double x) { return x >= 0.0; }),
          "lottery.lambdas must be >= 0");
  require(all_positive(lottery.etas), "lottery.etas must be > 0");
  require(all_positive(lottery.init_scales), "lottery.init_scales must be > 0");
  require(std::all_of(lottery.n_experts.begin(), lottery.n_experts.end(),
                      [](int x) { return x >= 2; }),
          "lottery.n_experts must be >= 2");
  require(lottery.separation_low >= 0.0 && lottery.separation_high >= 0.0,
          "lottery separations must be >= 0");
  require(!campaign.seeds.empty(), "campaign.seeds must be non-empty");
  {
    std::set<std::uint64_t> distinct(campaign.seeds.begin(), campaign.seeds.end());
    require(distinct.size() == campaign.seeds.size(), "campaign.seeds must be distinct");
  }
  require(campaign.runs >= 1, "campaign.runs must be >= 1");
  require(campaign.parallel >= 0, "campaign.parallel must be >= 0");
  require(campaign.fhs_fraction > 0.0 && campaign.fhs_fraction <= 1.0,
          "campaign.fhs_fraction must be in (0, 1]");
  require(!campaign.taus.empty() && all_positive(campaign.taus), "campaign.taus must be > 0");
  require(!campaign.thresholds.empty(), "campaign.thresholds must be non-empty");
  require(campaign.min_flagged >= 1, "campaign.min_flagged must be >= 1");
  require(campaign.max_runs >= 1, "campaign.max_runs must be >= 1");
  require(!output_dir.empty(), "output_dir must be non-empty");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig config;
  static const std::set<std::string> sections = {"task",        "model",   "training",
                                                 "diagnostics", "lottery", "campaign"};
  std::string section;
  std::map<std::string, int> key_lines;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!sections.contains(section)) {
        throw ConfigError(source, line_no, fmt::format("unknown section [{}]", section));
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source, line_no, "expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = setters().find(full);
    if (it == setters().end()) {
      throw ConfigError(source, line_no, fmt::format("unknown key '{}'", full));
    }
    if (!key_lines.emplace(full, line_no).second) {
      throw ConfigError(source, line_no, fmt::format("duplicate key '{}'", full));
    }
    try {
      it->second(config, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(source, line_no, fmt::format("{}: {}", full, e.what()));
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    // Messages start with the offending key; point at its line when it was set.
    const std::string message = std::string(e.what()).substr(std::string("config: ").size());
    const std::string key = message.substr(0, message.find(' '));
    const auto it = key_lines.find(key);
    throw ConfigError(source, it == key_lines.end() ? 0 : it->second, message);
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  auto line = [&out](std::string_view key, const std::string& value) {
    out += fmt::format("{} = {}\n", key, value);
  };
  line("output_dir", c.output_dir);

  out += "\n[task]\n";
  line("layout", std::string(to_string(c.task.layout)));
  line("n_clusters", fmt::format("{}", c.task.n_clusters));
  line("input_dim", fmt::format("{}", c.task.input_dim));
  line("n_classes", fmt::format("{}", c.task.n_classes));
  line("separation", real(c.task.separation));
  line("covariance_scale", real(c.task.covariance_scale));
  line("task_seed", fmt::format("{}", c.task.task_seed));
  {
    std::vector<std::string> rows;
    for (const auto& m : c.task.means) rows.push_back(join(m));
    line("means", fmt::format("{}", fmt::join(rows, "; ")));
  }
  line("mixture_weights", join(c.task.mixture_weights));
  line("labels", join(c.task.labels));

  out += "\n[model]\n";
  line("n_experts", fmt::format("{}", c.model.n_experts));
  line("tau", real(c.model.tau));
  line("top_k", c.model.top_k == 0 ? std::string("dense") : fmt::format("{}", c.model.top_k));
  line("lambda", real(c.model.lambda));
  line("init_scale", real(c.model.init_scale));
  line("expert_arch", std::string(to_string(c.model.expert_arch)));
  line("hidden", fmt::format("{}", c.model.hidden));

  out += "\n[training]\n";
  line("eta", real(c.training.eta));
  line("steps", fmt::format("{}", c.training.steps));
  line("batch_size", fmt::format("{}", c.training.batch_size));
  line("optimizer", std::string(to_string(c.training.optimizer)));

  out += "\n[diagnostics]\n";
  line("checkpoint_fraction", real(c.diagnostics.checkpoint_fraction));
  line("fim_batch_size", fmt::format("{}", c.diagnostics.fim_batch_size));
  line("probe_size", fmt::format("{}", c.diagnostics.probe_size));
  line("eval_size", fmt::format("{}", c.diagnostics.eval_size));
  line("bayes_samples", fmt::format("{}", c.diagnostics.bayes_samples));
  line("track_geodesic", c.diagnostics.track_geodesic ? "true" : "false");
  line("geodesic_probe_size", fmt::format("{}", c.diagnostics.geodesic_probe_size));
  line("geodesic_normalizer", c.diagnostics.geodesic_normalizer);

  out += "\n[lottery]\n";
  line("lambdas", join(c.lottery.lambdas));
  line("etas", join(c.lottery.etas));
  line("init_scales", join(c.lottery.init_scales));
  line("n_experts", join(c.lottery.n_experts));
  line("separation_low", real(c.lottery.separation_low));
  line("separation_high", real(c.lottery.separation_high));

  out += "\n[campaign]\n";
  line("seeds", join(c.campaign.seeds));
  line("runs", fmt::format("{}", c.campaign.runs));
  line("parallel", fmt::format("{}", c.campaign.parallel));
  line("fhs_fraction", real(c.campaign.fhs_fraction));
  line("taus", join(c.campaign.taus));
  line("thresholds", join(c.campaign.thresholds));
  line("min_flagged", fmt::format("{}", c.campaign.min_flagged));
  line("max_runs", fmt::format("{}", c.campaign.max_runs));
  return out;
}

GaussianMixtureSpec make_task(const TaskConfig& task, int n_experts) {
  if (!task.means.empty()) {
    GaussianMixtureSpec spec;
    spec.n_clusters = static_cast<int>(task.means.size());
    spec.input_dim = task.input_dim;
    for (const auto& m : task.means) {
      spec.means.push_back(Eigen::Map<const Eigen::VectorXd>(m.data(),
                                                             static_cast<Eigen::Index>(m.size())));
    }
    spec.covariance_scale = task.covariance_scale;
    spec.mixture_weights =
        task.mixture_weights.empty()
            ? ProbabilityVector::uniform(spec.n_clusters)
            : ProbabilityVector(Eigen::Map<const Eigen::VectorXd>(
                  task.mixture_weights.data(),
                  static_cast<Eigen::Index>(task.mixture_weights.size())));
    spec.label_of_cluster = task.labels;
    spec.validate();
    return spec;
  }
  TaskShape shape;
  shape.layout = task.layout;
  shape.n_clusters = task.n_clusters > 0                   ? task.n_clusters
                     : task.layout == TaskLayout::kRing ? 2 * n_experts
                                                          : n_experts;
  shape.input_dim = task.input_dim;
  shape.n_classes = task.n_classes;
  shape.separation = task.separation;
  shape.covariance_scale = task.covariance_scale;
  Rng rng = make_stream(task.task_seed, StreamPurpose::kTask);
  return make_gaussian_mixture(shape, rng);
}

std::vector<double> parse_real_list(const std::string& text) {
  return to_list<double>(text, to_real);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  return to_list<std::uint64_t>(text, to_u64);
}

void apply_seed_override(ExperimentConfig& config) {
  const char* env = std::getenv("FISHER_MOE_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    config.campaign.seeds = {to_u64(trim(env))};
  } catch (const std::invalid_argument& e) {
    throw ConfigError("FISHER_MOE_SEED", 0, e.what());
  }
}

}  // namespace fisher_moe
