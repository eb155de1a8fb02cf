// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/moe_model.hpp"

#include "fisher_moe/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fisher_moe {

std::string_view to_string(ExpertArch arch) {
  return arch == ExpertArch::kLinear ? "linear" : "mlp";
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kGd ? "gd" : "adam";
}

ExpertArch parse_expert_arch(std::string_view text) {
  if (text == "linear") return ExpertArch::kLinear;
  if (text == "mlp") return ExpertArch::kMlp;
  throw std::invalid_argument(fmt::format("unknown expert_arch '{}' (linear|mlp)", text));
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "gd") return OptimizerKind::kGd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument(fmt::format("unknown optimizer '{}' (gd|adam)", text));
}

Eigen::VectorXd ExpertWeights::flatten() const {
  Eigen::VectorXd out(param_count());
  Eigen::Index k = 0;
  for (const Eigen::MatrixXd* m : {&first, &second}) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) out[k++] = (*m)(r, c);
    }
  }
  return out;
}

bool ExpertWeights::operator==(const ExpertWeights& o) const {
  auto same = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return same(first, o.first) && same(second, o.second);
}

int MoEModelState::n_classes() const {
  if (experts.empty()) return 0;
  const auto& e = experts.front();
  return static_cast<int>(arch == ExpertArch::kLinear ? e.first.rows() : e.second.rows());
}

int MoEModelState::hidden() const {
  if (experts.empty() || arch == ExpertArch::kLinear) return 0;
  return static_cast<int>(experts.front().first.rows());
}

Eigen::Index MoEModelState::expert_param_count() const {
  return experts.empty() ? 0 : experts.front().param_count();
}

void MoEModelState::validate() const {
  if (router.rows() < 1) throw std::invalid_argument("model needs at least one expert");
  if (static_cast<int>(experts.size()) != n_experts()) {
    throw std::invalid_argument("router rows must match the number of experts");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be > 0");
  if (top_k < 0 || top_k > n_experts()) {
    throw std::invalid_argument(fmt::format("top_k must be in [1, {}] or 0 for dense", n_experts()));
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!router.allFinite()) throw std::invalid_argument("router weights are not finite");
  const int classes = n_classes();
  if (classes < 1) throw std::invalid_argument("experts need at least one class");
  for (const auto& e : experts) {
    if (!e.first.allFinite() || !e.second.allFinite()) {
      throw std::invalid_argument("expert weights are not finite");
    }
    if (arch == ExpertArch::kLinear) {
      if (e.first.rows() != classes || e.first.cols() != input_dim() || e.second.size() != 0) {
        throw std::invalid_argument("linear expert has the wrong shape");
      }
    } else if (e.first.cols() != input_dim() || e.second.cols() != e.first.rows() ||
               e.second.rows() != classes) {
      throw std::invalid_argument("mlp expert has the wrong shape");
    }
  }
}

bool MoEModelState::operator==(const MoEModelState& o) const {
  return router.rows() == o.router.rows() && router.cols() == o.router.cols() &&
         router == o.router && experts == o.experts && arch == o.arch && tau == o.tau &&
         top_k == o.top_k && lambda == o.lambda && step == o.step;
}

Eigen::MatrixXd xavier_uniform(Eigen::Index fan_out, Eigen::Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::MatrixXd m(fan_out, fan_in);
  for (Eigen::Index r = 0; r < fan_out; ++r) {
    for (Eigen::Index c = 0; c < fan_in; ++c) m(r, c) = dist(rng);
  }
  return m;
}

ExpertWeights init_expert(const ModelShape& shape, Rng& rng) {
  ExpertWeights w;
  if (shape.arch == ExpertArch::kLinear) {
    w.first = xavier_uniform(shape.n_classes, shape.input_dim, rng);
  } else {
    if (shape.hidden < 1) throw std::invalid_argument("mlp experts need hidden >= 1");
    w.first = xavier_uniform(shape.hidden, shape.input_dim, rng);
    w.second = xavier_uniform(shape.n_classes, shape.hidden, rng);
  }
  return w;
}

namespace {

Eigen::MatrixXd init_router(int n_experts, int input_dim, double init_scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = init_scale / std::sqrt(static_cast<double>(input_dim));
  Eigen::MatrixXd r(n_experts, input_dim);
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.cols(); ++j) r(i, j) = sd * normal(rng);
  }
  return r;
}

ModelShape shape_of(const MoEModelState& m) {
  return ModelShape{m.n_experts(), m.input_dim(), m.n_classes(), m.arch, m.hidden()};
}

}  // namespace

MoEModelState init_model(const ModelShape& shape, const ModelHyper& hyper, Rng& rng) {
  if (shape.n_experts < 1 || shape.input_dim < 1 || shape.n_classes < 1) {
    throw std::invalid_argument("model shape entries must be positive");
  }
  if (!(hyper.init_scale >= 0.0)) throw std::invalid_argument("init_scale must be >= 0");
  MoEModelState m;
  m.arch = shape.arch;
  m.tau = hyper.tau;
  m.top_k = hyper.top_k;
  m.lambda = hyper.lambda;
  m.router = init_router(shape.n_experts, shape.input_dim, hyper.init_scale, rng);
  for (int e = 0; e < shape.n_experts; ++e) m.experts.push_back(init_expert(shape, rng));
  m.validate();
  return m;
}

Eigen::VectorXd expert_logits(const ExpertWeights& w, ExpertArch arch,
                              const Eigen::Ref<const Eigen::VectorXd>& x,
                              Eigen::VectorXd* hidden_out) {
  if (arch == ExpertArch::kLinear) return w.first * x;
  Eigen::VectorXd h = (w.first * x).array().tanh();
  Eigen::VectorXd out = w.second * h;
  if (hidden_out != nullptr) *hidden_out = std::move(h);
  return out;
}

Eigen::VectorXd expert_class_probs(const ExpertWeights& w, ExpertArch arch,
                                   const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd l = expert_logits(w, arch, x);
  Eigen::VectorXd e = (l.array() - l.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd expert_score(const ExpertWeights& w, ExpertArch arch,
                             const Eigen::Ref<const Eigen::VectorXd>& x, int y) {
  Eigen::VectorXd h;
  const Eigen::VectorXd l = expert_logits(w, arch, x, &h);
  Eigen::VectorXd q = (l.array() - l.maxCoeff()).exp();
  q /= q.sum();
  Eigen::VectorXd residual = -q;
  residual[y] += 1.0;  // e_y - q

  Eigen::VectorXd out(w.param_count());
  if (arch == ExpertArch::kLinear) {
    // Row-major flattening of residual * x^T.
    for (Eigen::Index c = 0; c < residual.size(); ++c) {
      out.segment(c * x.size(), x.size()) = residual[c] * x;
    }
    return out;
  }
  const Eigen::VectorXd dh = w.second.transpose() * residual;
  const Eigen::VectorXd da = dh.array() * (1.0 - h.array().square());
  const Eigen::Index hdim = h.size();
  for (Eigen::Index r = 0; r < hdim; ++r) out.segment(r * x.size(), x.size()) = da[r] * x;
  const Eigen::Index offset = w.first.size();
  for (Eigen::Index c = 0; c < residual.size(); ++c) {
    out.segment(offset + c * hdim, hdim) = residual[c] * h;
  }
  return out;
}

Eigen::VectorXd gates_from_probs(const Eigen::Ref<const Eigen::VectorXd>& p, int top_k,
                                 std::vector<int>* selected) {
  const auto n = static_cast<int>(p.size());
  if (top_k == 0 || top_k >= n) {
    if (selected != nullptr) {
      selected->resize(static_cast<std::size_t>(n));
      std::iota(selected->begin(), selected->end(), 0);
    }
    return p;
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  order.resize(static_cast<std::size_t>(top_k));
  std::sort(order.begin(), order.end());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  double mass = 0.0;
  for (int i : order) mass += p[i];
  for (int i : order) g[i] = p[i] / mass;
  if (selected != nullptr) *selected = std::move(order);
  return g;
}

ForwardOutput forward(const MoEModelState& model, const LabeledBatch& batch) {
  if (batch.input_dim() != model.input_dim()) {
    throw std::invalid_argument(fmt::format("forward: input_dim {} does not match model ({})",
                                            batch.input_dim(), model.input_dim()));
  }
  ForwardOutput out;
  out.class_probs.resize(batch.size(), model.n_classes());
  out.gates.reserve(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    const Eigen::VectorXd x = batch.inputs.row(b).transpose();
    ProbabilityVector p = softmax(model.router * x, model.tau);
    std::vector<int> selected;
    Eigen::VectorXd g = gates_from_probs(p.values(), model.top_k, &selected);
    Eigen::VectorXd mixed = Eigen::VectorXd::Zero(model.n_classes());
    for (int e : selected) mixed += g[e] * expert_logits(model.experts[e], model.arch, x);
    Eigen::VectorXd q = (mixed.array() - mixed.maxCoeff()).exp();
    out.class_probs.row(b) = (q / q.sum()).transpose();
    out.gates.push_back(GateOutput{std::move(p), std::move(g), std::move(selected)});
  }
  return out;
}

double aux_loss(const Eigen::Ref<const Eigen::MatrixXd>& routing_probs,
                const std::vector<int>& top1_assignments, double lambda, int n) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("aux_loss: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;
  const auto batch = routing_probs.rows();
  if (batch == 0 || static_cast<Eigen::Index>(top1_assignments.size()) != batch) {
    throw std::invalid_argument("aux_loss: need one assignment per routed sample");
  }
  const Eigen::VectorXd p_bar = routing_probs.colwise().mean().transpose();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(routing_probs.cols());
  for (int a : top1_assignments) f[a] += 1.0;
  f /= static_cast<double>(batch);
  return lambda * n * p_bar.dot(f);
}

ModelGradient ModelGradient::zeros_like(const MoEModelState& model) {
  ModelGradient g;
  g.router = Eigen::MatrixXd::Zero(model.router.rows(), model.router.cols());
  for (const auto& e : model.experts) {
    g.experts.push_back(ExpertWeights{Eigen::MatrixXd::Zero(e.first.rows(), e.first.cols()),
                                      Eigen::MatrixXd::Zero(e.second.rows(), e.second.cols())});
  }
  return g;
}

ModelGradient& ModelGradient::operator+=(const ModelGradient& o) {
  router += o.router;
  for (std::size_t e = 0; e < experts.size(); ++e) {
    experts[e].first += o.experts[e].first;
    experts[e].second += o.experts[e].second;
  }
  return *this;
}

double ModelGradient::squared_norm() const {
  double s = router.squaredNorm();
  for (const auto& e : experts) s += e.first.squaredNorm() + e.second.squaredNorm();
  return s;
}

BackwardResult backward(const MoEModelState& model, const LabeledBatch& batch) {
  return kernels::loss_and_gradient(model, batch, kernels::Exec::kParallel);
}

namespace {

void adam_update(Eigen::MatrixXd& w, const Eigen::MatrixXd& g, Eigen::MatrixXd& m,
                 Eigen::MatrixXd& v, const AdamState& s, double eta) {
  m = s.beta1 * m + (1.0 - s.beta1) * g;
  v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  w.array() -= eta * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
}

}  // namespace

LossBreakdown train_step_inplace(MoEModelState& model, const LabeledBatch& batch, double eta,
                                 AdamState* adam) {
  if (!(eta >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  BackwardResult r = backward(model, batch);
  if (adam == nullptr) {
    model.router -= eta * r.grad.router;
    for (std::size_t e = 0; e < model.experts.size(); ++e) {
      model.experts[e].first -= eta * r.grad.experts[e].first;
      model.experts[e].second -= eta * r.grad.experts[e].second;
    }
  } else {
    if (adam->m.experts.empty()) {
      adam->m = ModelGradient::zeros_like(model);
      adam->v = ModelGradient::zeros_like(model);
    }
    ++adam->t;
    adam_update(model.router, r.grad.router, adam->m.router, adam->v.router, *adam, eta);
    for (std::size_t e = 0; e < model.experts.size(); ++e) {
      adam_update(model.experts[e].first, r.grad.experts[e].first, adam->m.experts[e].first,
                  adam->v.experts[e].first, *adam, eta);
      adam_update(model.experts[e].second, r.grad.experts[e].second, adam->m.experts[e].second,
                  adam->v.experts[e].second, *adam, eta);
    }
  }
  ++model.step;
  return r.loss;
}

TrainStepResult train_step(const MoEModelState& model, const LabeledBatch& batch, double eta) {
  TrainStepResult out{model, {}};
  out.loss = train_step_inplace(out.model, batch, eta);
  return out;
}

ProbabilityVector marginal_routing(const MoEModelState& model, const SampleMatrix& inputs) {
  if (inputs.rows() == 0) throw std::invalid_argument("marginal_routing: empty sample");
  if (inputs.cols() != model.input_dim()) {
    throw std::invalid_argument("marginal_routing: input_dim does not match model");
  }
  return ProbabilityVector(kernels::mean_routing(model, inputs, kernels::Exec::kParallel));
}

ProbabilityVector marginal_routing(const MoEModelState& model, const LabeledBatch& sample) {
  return marginal_routing(model, sample.inputs);
}

MoEModelState reinit_experts_keep_router(const MoEModelState& model, Rng& rng,
                                         bool halve_lambda) {
  MoEModelState out = model;
  const ModelShape shape = shape_of(model);
  for (auto& e : out.experts) e = init_expert(shape, rng);
  if (halve_lambda) out.lambda = 0.5 * model.lambda;
  return out;
}

MoEModelState reinit_all(const MoEModelState& model, double init_scale, Rng& rng) {
  MoEModelState out = model;
  const ModelShape shape = shape_of(model);
  out.router = init_router(shape.n_experts, shape.input_dim, init_scale, rng);
  for (auto& e : out.experts) e = init_expert(shape, rng);
  return out;
}

}  // namespace fisher_moe
