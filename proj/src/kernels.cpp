// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0

#include "fisher_moe/kernels.hpp"

#include <fmt/format.h>

#include <cmath>

namespace fisher_moe::kernels {

namespace {

// Serial: one accumulator, samples in order. Parallel: one accumulator per
// fixed chunk, chunks folded in order.
template <class Acc, class Init, class Body, class Merge>
Acc chunked_reduce(Eigen::Index n, Exec exec, Init init, Body body, Merge merge) {
  if (exec == Exec::kSerial) {
    Acc acc = init();
    for (Eigen::Index i = 0; i < n; ++i) body(acc, i);
    return acc;
  }
  const Eigen::Index chunks = (n + kChunkSize - 1) / kChunkSize;
  if (chunks <= 1) {
    Acc acc = init();
    for (Eigen::Index i = 0; i < n; ++i) body(acc, i);
    return acc;
  }
  std::vector<Acc> parts;
  parts.reserve(static_cast<std::size_t>(chunks));
  for (Eigen::Index c = 0; c < chunks; ++c) parts.push_back(init());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index end = std::min(n, (c + 1) * kChunkSize);
    for (Eigen::Index i = c * kChunkSize; i < end; ++i) body(parts[c], i);
  }
  Acc acc = std::move(parts.front());
  for (Eigen::Index c = 1; c < chunks; ++c) merge(acc, parts[c]);
  return acc;
}

// log-sum-exp of v minus v[y], i.e. -log softmax(v)_y.
double cross_entropy(const Eigen::VectorXd& logits, int y, Eigen::VectorXd* probs) {
  const double top = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - top).exp();
  const double z = e.sum();
  if (probs != nullptr) *probs = e / z;
  return std::log(z) + top - logits[y];
}

void check_inputs(const MoEModelState& model, Eigen::Index cols, const char* what) {
  if (cols != model.input_dim()) {
    throw std::invalid_argument(
        fmt::format("{}: input_dim {} does not match model ({})", what, cols, model.input_dim()));
  }
}

Eigen::VectorXd routing_row(const MoEModelState& model, const Eigen::VectorXd& x) {
  const Eigen::VectorXd z = model.router * x;
  Eigen::VectorXd e = ((z.array() - z.maxCoeff()) / model.tau).exp();
  return e / e.sum();
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

struct GradPartial {
  ModelGradient grad;
  double loss_sum = 0.0;
};

}  // namespace

Eigen::MatrixXd routing_probs(const MoEModelState& model, const SampleMatrix& inputs, Exec exec) {
  check_inputs(model, inputs.cols(), "routing_probs");
  Eigen::MatrixXd out(inputs.rows(), model.n_experts());
  auto fill = [&](Eigen::Index b) {
    out.row(b) = routing_row(model, inputs.row(b).transpose()).transpose();
  };
  if (exec == Exec::kSerial) {
    for (Eigen::Index b = 0; b < inputs.rows(); ++b) fill(b);
  } else {
#pragma omp parallel for schedule(static) if (inputs.rows() > kChunkSize)
    for (Eigen::Index b = 0; b < inputs.rows(); ++b) fill(b);
  }
  return out;
}

Eigen::VectorXd mean_routing(const MoEModelState& model, const SampleMatrix& inputs, Exec exec) {
  check_inputs(model, inputs.cols(), "mean_routing");
  if (inputs.rows() == 0) throw std::invalid_argument("mean_routing: empty sample");
  const auto n = model.n_experts();
  Eigen::VectorXd sum = chunked_reduce<Eigen::VectorXd>(
      inputs.rows(), exec, [n] { return Eigen::VectorXd::Zero(n).eval(); },
      [&](Eigen::VectorXd& acc, Eigen::Index b) {
        acc += routing_row(model, inputs.row(b).transpose());
      },
      [](Eigen::VectorXd& acc, const Eigen::VectorXd& part) { acc += part; });
  return sum / static_cast<double>(inputs.rows());
}

RoutingTangent routing_tangent(const MoEModelState& model, const SampleMatrix& inputs,
                               const Eigen::MatrixXd& delta_router, Exec exec) {
  check_inputs(model, inputs.cols(), "routing_tangent");
  if (inputs.rows() == 0) throw std::invalid_argument("routing_tangent: empty sample");
  const auto n = model.n_experts();
  // Accumulator: first n entries hold sum_x J(x) dz(x), the last one sum |dz|^2.
  Eigen::VectorXd sum = chunked_reduce<Eigen::VectorXd>(
      inputs.rows(), exec, [n] { return Eigen::VectorXd::Zero(n + 1).eval(); },
      [&](Eigen::VectorXd& acc, Eigen::Index b) {
        const Eigen::VectorXd x = inputs.row(b).transpose();
        const Eigen::VectorXd p = routing_row(model, x);
        const Eigen::VectorXd dz = delta_router * x;
        acc.head(n) += (p.array() * (dz.array() - p.dot(dz))).matrix() / model.tau;
        acc[n] += dz.squaredNorm();
      },
      [](Eigen::VectorXd& acc, const Eigen::VectorXd& part) { acc += part; });
  const double count = static_cast<double>(inputs.rows());
  return RoutingTangent{sum.head(n) / count, std::sqrt(sum[n] / count)};
}

BackwardResult loss_and_gradient(const MoEModelState& model, const LabeledBatch& batch,
                                 Exec exec) {
  check_inputs(model, batch.input_dim(), "backward");
  const Eigen::Index batch_size = batch.size();
  if (batch_size == 0) throw std::invalid_argument("backward: empty batch");
  const int n = model.n_experts();
  const int classes = model.n_classes();
  const double inv_b = 1.0 / static_cast<double>(batch_size);

  // Pass 1: routing and the (constant) top-1 fractions for the aux term.
  const Eigen::MatrixXd probs = routing_probs(model, batch.inputs, exec);
  std::vector<int> top1(static_cast<std::size_t>(batch_size));
  Eigen::VectorXd frac = Eigen::VectorXd::Zero(n);
  for (Eigen::Index b = 0; b < batch_size; ++b) {
    if (batch.labels[b] < 0 || batch.labels[b] >= classes) {
      throw std::invalid_argument("backward: label out of range");
    }
    top1[b] = argmax(probs.row(b).transpose());
    frac[top1[b]] += inv_b;
  }
  const double aux = aux_loss(probs, top1, model.lambda, n);
  const Eigen::VectorXd aux_dp = model.lambda * n * inv_b * frac;

  // Pass 2: per-sample backprop.
  auto body = [&](GradPartial& acc, Eigen::Index b) {
    const Eigen::VectorXd x = batch.inputs.row(b).transpose();
    const int y = batch.labels[b];
    const Eigen::VectorXd p = probs.row(b).transpose();
    std::vector<int> selected;
    const Eigen::VectorXd g = gates_from_probs(p, model.top_k, &selected);

    std::vector<Eigen::VectorXd> logits(static_cast<std::size_t>(n));
    std::vector<Eigen::VectorXd> hidden(static_cast<std::size_t>(n));
    Eigen::VectorXd mixed = Eigen::VectorXd::Zero(classes);
    for (int e : selected) {
      logits[e] = expert_logits(model.experts[e], model.arch, x, &hidden[e]);
      mixed += g[e] * logits[e];
    }
    Eigen::VectorXd q;
    acc.loss_sum += cross_entropy(mixed, y, &q);
    Eigen::VectorXd d_out = q;
    d_out[y] -= 1.0;
    d_out *= inv_b;

    Eigen::VectorXd d_gate = Eigen::VectorXd::Zero(n);
    for (int e : selected) {
      d_gate[e] = d_out.dot(logits[e]);
      ExpertWeights& ge = acc.grad.experts[e];
      if (model.arch == ExpertArch::kLinear) {
        ge.first.noalias() += (g[e] * d_out) * x.transpose();
      } else {
        ge.second.noalias() += (g[e] * d_out) * hidden[e].transpose();
        const Eigen::VectorXd dh = g[e] * (model.experts[e].second.transpose() * d_out);
        const Eigen::VectorXd da = dh.array() * (1.0 - hidden[e].array().square());
        ge.first.noalias() += da * x.transpose();
      }
    }

    Eigen::VectorXd d_p = Eigen::VectorXd::Zero(n);
    if (model.dense()) {
      d_p = d_gate;
    } else {
      double mass = 0.0;
      double weighted = 0.0;
      for (int e : selected) {
        mass += p[e];
        weighted += g[e] * d_gate[e];
      }
      for (int e : selected) d_p[e] = (d_gate[e] - weighted) / mass;
    }
    d_p += aux_dp;
    const Eigen::VectorXd d_z = (p.array() * (d_p.array() - p.dot(d_p))).matrix() / model.tau;
    acc.grad.router.noalias() += d_z * x.transpose();
  };

  GradPartial total = chunked_reduce<GradPartial>(
      batch_size, exec, [&] { return GradPartial{ModelGradient::zeros_like(model), 0.0}; }, body,
      [](GradPartial& acc, const GradPartial& part) {
        acc.grad += part.grad;
        acc.loss_sum += part.loss_sum;
      });

  BackwardResult out{std::move(total.grad), {}};
  out.loss.task_loss = total.loss_sum * inv_b;
  out.loss.aux_loss = aux;
  out.loss.total = out.loss.task_loss + out.loss.aux_loss;
  out.loss.router_grad_norm = out.grad.router.norm();
  if (!std::isfinite(out.loss.total) || !std::isfinite(out.grad.squared_norm())) {
    throw NonFiniteLossError(fmt::format("non-finite loss at step {}: task={} aux={}", model.step,
                                         out.loss.task_loss, out.loss.aux_loss),
                             out.loss.task_loss, out.loss.aux_loss, model.step);
  }
  return out;
}

Evaluation evaluate(const MoEModelState& model, const LabeledBatch& batch, Exec exec) {
  check_inputs(model, batch.input_dim(), "evaluate");
  if (batch.size() == 0) throw std::invalid_argument("evaluate: empty batch");
  const int n = model.n_experts();
  const int classes = model.n_classes();
  // Accumulator layout: [loss_sum, correct, top1 counts...].
  Eigen::VectorXd sum = chunked_reduce<Eigen::VectorXd>(
      batch.size(), exec, [n] { return Eigen::VectorXd::Zero(n + 2).eval(); },
      [&](Eigen::VectorXd& acc, Eigen::Index b) {
        const Eigen::VectorXd x = batch.inputs.row(b).transpose();
        const Eigen::VectorXd p = routing_row(model, x);
        std::vector<int> selected;
        const Eigen::VectorXd g = gates_from_probs(p, model.top_k, &selected);
        Eigen::VectorXd mixed = Eigen::VectorXd::Zero(classes);
        for (int e : selected) mixed += g[e] * expert_logits(model.experts[e], model.arch, x);
        acc[0] += cross_entropy(mixed, batch.labels[b], nullptr);
        if (argmax(mixed) == batch.labels[b]) acc[1] += 1.0;
        acc[2 + argmax(p)] += 1.0;
      },
      [](Eigen::VectorXd& acc, const Eigen::VectorXd& part) { acc += part; });
  Evaluation ev;
  const double count = static_cast<double>(batch.size());
  ev.mean_loss = sum[0] / count;
  ev.accuracy = sum[1] / count;
  ev.top1_counts.resize(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) ev.top1_counts[e] = std::lround(sum[2 + e]);
  return ev;
}

Eigen::VectorXd mean_squared_score(const ExpertWeights& expert, ExpertArch arch,
                                   const LabeledBatch& batch, Exec exec) {
  if (batch.size() == 0) throw std::invalid_argument("mean_squared_score: empty batch");
  const Eigen::Index d = expert.param_count();
  Eigen::VectorXd sum = chunked_reduce<Eigen::VectorXd>(
      batch.size(), exec, [d] { return Eigen::VectorXd::Zero(d).eval(); },
      [&](Eigen::VectorXd& acc, Eigen::Index b) {
        const Eigen::VectorXd x = batch.inputs.row(b).transpose();
        acc += expert_score(expert, arch, x, batch.labels[b]).cwiseAbs2();
      },
      [](Eigen::VectorXd& acc, const Eigen::VectorXd& part) { acc += part; });
  return sum / static_cast<double>(batch.size());
}

}  // namespace fisher_moe::kernels
