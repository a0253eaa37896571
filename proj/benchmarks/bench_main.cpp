#include <benchmark/benchmark.h>

#include <vector>

#include "madcnn/evaluator.hpp"
#include "madcnn/model.hpp"
#include "madcnn/random.hpp"
#include "madcnn/sim.hpp"
#include "madcnn/trainer.hpp"

using namespace madcnn;

namespace {

data::InputFrame random_frame(Rng& rng) {
  data::InputFrame f;
  for (double& v : f.values) v = rng.uniform();
  return f;
}

void BM_Conv1dDilated(benchmark::State& state) {
  Rng rng(1);
  auto p = nn::ConvParams::zeros(32, 16, static_cast<std::size_t>(state.range(0)));
  for (double& w : p.weights) w = rng.uniform(-0.1, 0.1);
  nn::FeatureMap x(16, 5), out;
  for (double& v : x.values) v = rng.uniform();
  for (auto _ : state) {
    nn::conv1d_dilated_into(x, p, out);
    benchmark::DoNotOptimize(out.values.data());
  }
}
BENCHMARK(BM_Conv1dDilated)->Arg(1)->Arg(8);

void BM_Forward(benchmark::State& state, const char* variant) {
  const auto params = build_model(variant_config(variant), 42);
  Rng rng(2);
  const auto frame = random_frame(rng);
  ActivationCache cache;
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, frame, cache).p_collision);
}
BENCHMARK_CAPTURE(BM_Forward, MAD, "MAD");
BENCHMARK_CAPTURE(BM_Forward, M, "M");
BENCHMARK_CAPTURE(BM_Forward, AD, "AD");

void BM_ForwardBackward(benchmark::State& state) {
  const auto params = build_model(variant_config("MAD"), 42);
  auto grads = zeros_like(params);
  Rng rng(3);
  const auto frame = random_frame(rng);
  ActivationCache cache;
  for (auto _ : state) {
    forward(params, frame, cache);
    benchmark::DoNotOptimize(backward(cache, 1, grads));
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_TrainEpoch(benchmark::State& state) {
  Rng rng(4);
  std::vector<data::InputFrame> frames(static_cast<std::size_t>(state.range(0)));
  for (auto& f : frames) {
    f = random_frame(rng);
    f.label = rng.uniform() < 0.1 ? 1 : 0;
  }
  TrainConfig tc;
  tc.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(variant_config("MAD"), frames, tc).loss_history);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainEpoch)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_SimulateMinute(benchmark::State& state) {
  const sim::SimConfig config;
  const auto events = sim::schedule_collisions(60.0, config, 5);
  const auto trajectory = sim::generate_trajectory(60.0, config, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sim::simulate_trace(config, 4, events, trajectory, 5).labels.data());
  }
}
BENCHMARK(BM_SimulateMinute)->Unit(benchmark::kMillisecond);

void BM_ComputeReport(benchmark::State& state) {
  Rng rng(6);
  eval::Decisions dec(600000), lab(600000, 0);
  for (auto& d : dec) d = rng.uniform() < 0.01 ? 1 : 0;
  for (std::size_t s = 500; s + 80 < lab.size(); s += 3500) {
    for (std::size_t k = 0; k < 50; ++k) lab[s + k] = 1;
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::compute_report(eval::continuous_filter(dec, 10), lab).fpn);
}
BENCHMARK(BM_ComputeReport)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
