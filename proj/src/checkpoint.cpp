// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/checkpoint.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

namespace fisher_moe {

namespace {

void write_matrix(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  out << fmt::format("matrix {} {} {}\n", name, m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out << (c == 0 ? "" : " ") << fmt::format("{:a}", m(r, c));
    }
    out << '\n';
  }
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw CheckpointError("checkpoint: unexpected end of input");
    return w;
  }

  void expect(const std::string& keyword) {
    const std::string w = word();
    if (w != keyword) {
      throw CheckpointError(fmt::format("checkpoint: expected '{}', found '{}'", keyword, w));
    }
  }

  long integer() {
    const std::string w = word();
    char* end = nullptr;
    const long v = std::strtol(w.c_str(), &end, 10);
    if (end == w.c_str() || *end != '\0') {
      throw CheckpointError(fmt::format("checkpoint: '{}' is not an integer", w));
    }
    return v;
  }

  double real() {
    const std::string w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') {
      throw CheckpointError(fmt::format("checkpoint: '{}' is not a number", w));
    }
    return v;
  }

  Eigen::MatrixXd matrix(const std::string& name) {
    expect("matrix");
    expect(name);
    const long rows = integer();
    const long cols = integer();
    if (rows < 0 || cols < 0) throw CheckpointError("checkpoint: negative matrix shape");
    Eigen::MatrixXd m(rows, cols);
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) m(r, c) = real();
    }
    return m;
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const MoEModelState& model) {
  model.validate();
  out << "fisher-moe-checkpoint " << kCheckpointVersion << '\n';
  out << "arch " << to_string(model.arch) << '\n';
  out << fmt::format("shape {} {} {} {}\n", model.n_experts(), model.input_dim(),
                     model.n_classes(), model.hidden());
  out << fmt::format("tau {:a}\n", model.tau);
  out << "top_k " << model.top_k << '\n';
  out << fmt::format("lambda {:a}\n", model.lambda);
  out << "step " << model.step << '\n';
  write_matrix(out, "router", model.router);
  for (std::size_t e = 0; e < model.experts.size(); ++e) {
    write_matrix(out, fmt::format("expert.{}.first", e), model.experts[e].first);
    write_matrix(out, fmt::format("expert.{}.second", e), model.experts[e].second);
  }
  out << "end\n";
}

MoEModelState read_checkpoint(std::istream& in) {
  Reader r(in);
  r.expect("fisher-moe-checkpoint");
  const long version = r.integer();
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("checkpoint: unsupported version {}", version));
  }
  MoEModelState m;
  r.expect("arch");
  try {
    m.arch = parse_expert_arch(r.word());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(fmt::format("checkpoint: {}", e.what()));
  }
  r.expect("shape");
  const long n_experts = r.integer();
  const long input_dim = r.integer();
  const long n_classes = r.integer();
  const long hidden = r.integer();
  r.expect("tau");
  m.tau = r.real();
  r.expect("top_k");
  m.top_k = static_cast<int>(r.integer());
  r.expect("lambda");
  m.lambda = r.real();
  r.expect("step");
  m.step = r.integer();
  m.router = r.matrix("router");
  for (long e = 0; e < n_experts; ++e) {
    ExpertWeights w;
    w.first = r.matrix(fmt::format("expert.{}.first", e));
    w.second = r.matrix(fmt::format("expert.{}.second", e));
    m.experts.push_back(std::move(w));
  }
  r.expect("end");
  if (m.router.rows() != n_experts || m.router.cols() != input_dim ||
      m.n_classes() != n_classes || m.hidden() != hidden) {
    throw CheckpointError("checkpoint: weight shapes disagree with the shape header");
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(fmt::format("checkpoint: {}", e.what()));
  }
  return m;
}

std::string checkpoint_to_string(const MoEModelState& model) {
  std::ostringstream out;
  write_checkpoint(out, model);
  return out.str();
}

MoEModelState checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  return read_checkpoint(in);
}

}  // namespace fisher_moe
