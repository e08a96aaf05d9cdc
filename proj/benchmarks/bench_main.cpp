// SPDX-License-Identifier: Apache-2.0
// Microbenchmarks at desk scale (d = 32, 4 layers, 16-token prompts).
#include <utility>
#include <vector>

#include <benchmark/benchmark.h>

#include "depthrnn/backbone/backbone.hpp"
#include "depthrnn/cells/cells.hpp"
#include "depthrnn/depth/hallurnn.hpp"
#include "depthrnn/numerics/ops.hpp"
#include "depthrnn/numerics/rng.hpp"
#include "depthrnn/training/trainer.hpp"

namespace {

using namespace depthrnn;

backbone::BackboneConfig desk_model() {
  backbone::BackboneConfig c;
  c.n_layers = 4;
  c.d_model = 32;
  c.n_heads = 4;
  c.vocab = 72;
  c.max_seq = 16;
  c.ff_mult = 4;
  return c;
}

std::vector<std::size_t> prompt(Rng& rng, std::size_t vocab, std::size_t len) {
  std::vector<std::size_t> t(len);
  for (std::size_t& x : t) x = rng.below(vocab);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = normal_tensor({n, n}, 1.0, rng), b = normal_tensor({n, n}, 1.0, rng);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(ops::matmul(t.constant(a), t.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(32)->Arg(128);

void BM_DgDpuStep(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const cells::DgDpuParams p = cells::DgDpuParams::init(32, rng);
  const Tensor m = normal_tensor({rows, 32}, 1.0, rng), v = normal_tensor({rows, 32}, 1.0, rng);
  for (auto _ : state) {
    Tape t;
    const cells::BoundDgDpu b = cells::bind(t, p);
    benchmark::DoNotOptimize(cells::dgdpu_step(t.constant(m), t.constant(v), b).v_next.value().data());
  }
}
BENCHMARK(BM_DgDpuStep)->Arg(1)->Arg(16);

void BM_GruStep(benchmark::State& state) {
  Rng rng(3);
  const cells::GruParams p = cells::GruParams::init(32, rng);
  const Tensor m = normal_tensor({16, 32}, 1.0, rng), v = normal_tensor({16, 32}, 1.0, rng);
  for (auto _ : state) {
    Tape t;
    const cells::BoundGru b = cells::bind(t, p);
    benchmark::DoNotOptimize(cells::gru_step(t.constant(m), t.constant(v), b).value().data());
  }
}
BENCHMARK(BM_GruStep);

void BM_VanillaForward(benchmark::State& state) {
  Rng rng(4);
  const backbone::BackboneWeights w = backbone::BackboneWeights::init(desk_model(), rng);
  const auto tokens = prompt(rng, 72, 16);
  for (auto _ : state) benchmark::DoNotOptimize(backbone::vanilla_forward(tokens, w).logits.data());
}
BENCHMARK(BM_VanillaForward);

void BM_HallurnnForward(benchmark::State& state) {
  Rng rng(5);
  const backbone::BackboneWeights w = backbone::BackboneWeights::init(desk_model(), rng);
  const depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 32, rng);
  const auto tokens = prompt(rng, 72, 16);
  for (auto _ : state) {
    Tape t;
    const backbone::BoundBackbone b = backbone::bind(t, w);
    const auto cell = depth::bind(t, mode);
    benchmark::DoNotOptimize(depth::hallurnn_logits(tokens, b, *cell).logits.value().data());
  }
}
BENCHMARK(BM_HallurnnForward);

// One forward and backward pass of the fine-tuning loss through the frozen backbone.
void BM_FinetuneLossBackward(benchmark::State& state) {
  Rng rng(6);
  backbone::BackboneWeights w = backbone::BackboneWeights::init(desk_model(), rng);
  w.freeze();
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, 32, rng);
  training::TrainingSequence seq{prompt(rng, 72, 16), 15};
  const std::vector<int> targets = training::targets_for(seq, training::LossMask::kAnswerTokensOnly);
  for (auto _ : state) {
    Tape t;
    const backbone::BoundBackbone b = backbone::bind(t, std::as_const(w));
    const auto cell = depth::bind(t, mode);
    t.backward(training::recurrence_loss(seq.inputs(), targets, b, *cell));
    for (Parameter* p : mode.parameters()) p->zero_grad();
  }
}
BENCHMARK(BM_FinetuneLossBackward);

}  // namespace

BENCHMARK_MAIN();
