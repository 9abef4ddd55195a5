// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "aag/dataset.hpp"
#include "aag/model.hpp"
#include "aag/tensor.hpp"
#include "aag/training.hpp"

namespace {

aag::Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  aag::Tensor t(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const aag::Tensor a = random_tensor(n, n, rng), b = random_tensor(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(aag::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

struct Setup {
  aag::SyntheticData data;
  aag::ModelConfig cfg;
};

Setup make_setup(std::uint32_t d_model, aag::InputMode input = aag::InputMode::frame) {
  aag::SyntheticSpec spec;
  spec.n_samples = 64;
  spec.d_ft = 64;
  spec.d_txt = 64;
  spec.frames = input == aag::InputMode::video ? 8 : 1;
  Setup s{aag::generate_synthetic(spec), {}};
  s.cfg.d_model = d_model;
  s.cfg.fusion_heads = 4;
  s.cfg.video_heads = 4;
  s.cfg.video_layers = 1;
  s.cfg.input = input;
  aag::bind_to_dataset(s.cfg, s.data.train.meta);
  return s;
}

void BM_ForwardBatch(benchmark::State& state) {
  const Setup s = make_setup(static_cast<std::uint32_t>(state.range(0)));
  const aag::AagModel model(s.cfg);
  std::vector<const aag::EmbeddingRecord*> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(&s.data.train.records[i]);
  for (auto _ : state) {
    aag::Tape tape;
    benchmark::DoNotOptimize(model.forward_batch(tape, batch, s.data.table).value());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBatch)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const Setup s = make_setup(static_cast<std::uint32_t>(state.range(0)),
                             state.range(1) ? aag::InputMode::video : aag::InputMode::frame);
  aag::AagModel model(s.cfg);
  aag::TrainConfig tc;
  aag::OptimizerState opt;
  std::vector<const aag::EmbeddingRecord*> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(&s.data.train.records[i]);
  for (auto _ : state) {
    model.zero_grad();
    aag::Tape tape;
    aag::Var loss = aag::batch_loss(tape, model, batch, s.data.table);
    tape.backward(loss);
    aag::adamw_step(model.parameters(), opt, tc);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Args({32, 0})->Args({64, 0})->Args({32, 1})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
