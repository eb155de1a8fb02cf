// Copyright (c) 2026, The fisher-moe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference against the OpenMP kernels. Both paths reduce in the same
// fixed chunk order, so only the wall clock differs.

#include "fisher_moe/kernels.hpp"

#include <benchmark/benchmark.h>

#include <omp.h>

namespace {

using namespace fisher_moe;
using kernels::Exec;

struct Fixture {
  MoEModelState model;
  LabeledBatch batch;
};

Fixture make_fixture(int batch_size) {
  TaskShape task;
  task.n_clusters = 8;
  task.input_dim = 32;
  Rng task_rng = make_stream(1, StreamPurpose::kTask);
  const auto spec = make_gaussian_mixture(task, task_rng);
  ModelShape shape;
  shape.n_experts = 8;
  shape.input_dim = 32;
  shape.n_classes = spec.n_classes();
  shape.arch = ExpertArch::kMlp;
  shape.hidden = 32;
  Rng init = make_stream(1, StreamPurpose::kInit);
  Rng data = make_stream(1, StreamPurpose::kData);
  return {init_model(shape, ModelHyper{}, init), sample_batch(spec, batch_size, data)};
}

Exec exec_of(const benchmark::State& state) {
  return state.range(1) == 0 ? Exec::kSerial : Exec::kParallel;
}

void label(benchmark::State& state) {
  state.SetLabel(exec_of(state) == Exec::kSerial
                     ? "serial"
                     : "omp x" + std::to_string(omp_get_max_threads()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LossAndGradient(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::loss_and_gradient(f.model, f.batch, exec_of(state)));
  }
  label(state);
}

void BM_RoutingProbs(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::routing_probs(f.model, f.batch.inputs, exec_of(state)));
  }
  label(state);
}

void BM_MeanSquaredScore(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        kernels::mean_squared_score(f.model.experts[0], f.model.arch, f.batch, exec_of(state)));
  }
  label(state);
}

#define FISHER_MOE_BENCH(fn) \
  BENCHMARK(fn)->ArgsProduct({{512, 4096}, {0, 1}})->Unit(benchmark::kMicrosecond)

FISHER_MOE_BENCH(BM_LossAndGradient);
FISHER_MOE_BENCH(BM_RoutingProbs);
FISHER_MOE_BENCH(BM_MeanSquaredScore);

}  // namespace

BENCHMARK_MAIN();
