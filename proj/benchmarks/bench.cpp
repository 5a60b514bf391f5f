#include <benchmark/benchmark.h>

#include <vector>

#include "saintplus/data.hpp"
#include "saintplus/metrics.hpp"
#include "saintplus/model.hpp"
#include "saintplus/rng.hpp"
#include "saintplus/tensor.hpp"
#include "saintplus/training.hpp"

using namespace saintplus;

namespace {

tensor::Tensor random_tensor(tensor::Shape shape, std::uint64_t seed) {
  tensor::Tensor t(std::move(shape));
  CounterRng rng(seed);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

data::Window random_window(const model::ModelConfig& c, std::uint64_t seed) {
  CounterRng rng(seed);
  data::Window w;
  for (std::size_t t = 0; t < c.window; ++t) {
    w.exercise_id.push_back(static_cast<std::int64_t>(1 + rng.below(c.num_exercises)));
    w.category_id.push_back(static_cast<std::int64_t>(1 + rng.below(c.num_categories)));
    w.correct.push_back(rng.bernoulli(0.6) ? 1 : 0);
    w.elapsed_ms.push_back(static_cast<std::int64_t>(rng.below(120'000)));
    w.lag_ms.push_back(t == 0 ? 0 : static_cast<std::int64_t>(rng.below(100'000'000)));
    w.valid.push_back(1);
  }
  return w;
}

model::ModelConfig desk() {
  model::ModelConfig c;
  c.num_exercises = 100;
  c.num_categories = 5;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    tensor::Graph g;
    benchmark::DoNotOptimize(tensor::matmul(g.constant(a), g.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(100)->Arg(256);

void BM_CausalSoftmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({n, n}, 3);
  for (auto _ : state) {
    tensor::Graph g;
    benchmark::DoNotOptimize(tensor::masked_softmax(g.constant(x), tensor::Mask::causal).value().data());
  }
}
BENCHMARK(BM_CausalSoftmax)->Arg(100);

void BM_Predict(benchmark::State& state) {
  const model::SaintPlus m(desk(), 1);
  const auto w = random_window(m.config(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(w).data());
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  model::SaintPlus m(desk(), 1);
  std::vector<data::Window> windows;
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(state.range(0)); ++i)
    windows.push_back(random_window(m.config(), 10 + i));
  std::vector<const data::Window*> batch;
  for (const auto& w : windows) batch.push_back(&w);
  for (auto _ : state) benchmark::DoNotOptimize(training::accumulate_batch_gradients(m, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Auc(benchmark::State& state) {
  CounterRng rng(5);
  std::vector<double> s;
  std::vector<int> y;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    s.push_back(rng.uniform());
    y.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auc(s, y));
}
BENCHMARK(BM_Auc)->Arg(100'000);

}  // namespace

BENCHMARK_MAIN();
