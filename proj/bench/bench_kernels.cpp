// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Serial reference kernels against their OpenMP counterparts. Thread count
// follows OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ciffuse/data.hpp"
#include "ciffuse/fusion.hpp"
#include "ciffuse/kernels.hpp"
#include "ciffuse/optim.hpp"

using namespace ciffuse;

namespace {

std::vector<double> random_matrix(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <auto Kernel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Kernel(a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
  state.counters["threads"] = kernels::max_threads();
}

BENCHMARK(BM_gemm<kernels::gemm_nn_serial>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_gemm<kernels::gemm_nn_parallel>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_gemm<kernels::gemm_nt_serial>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_gemm<kernels::gemm_nt_parallel>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_gemm<kernels::gemm_tn_serial>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();
BENCHMARK(BM_gemm<kernels::gemm_tn_parallel>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(32, 256)->UseRealTime();

// One training batch of the default model: per-utterance tapes, serial or
// spread over threads.
void BM_batch_gradients(benchmark::State& state) {
  const bool parallel = state.range(0) != 0;
  static const auto ds = data::generate_dataset(data::TaskSpec{}, 16, 1);
  fusion::FusionModel model(fusion::ModelConfig{}, 1);
  for (auto _ : state) {
    model.params().zero_grad();
    auto res = optim::accumulate_batch_gradients(
        model.params(), ds.utterances.size(),
        [&](Tape&, nn::Binder& bind, std::size_t i) {
          Rng rng = make_rng(1, {i});
          return model.forward_train(bind, ds.utterances[i], 0.5, rng).loss;
        },
        parallel);
    benchmark::DoNotOptimize(res.losses.data());
  }
  state.SetLabel(parallel ? "parallel" : "serial");
  state.counters["threads"] = kernels::max_threads();
}

BENCHMARK(BM_batch_gradients)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
