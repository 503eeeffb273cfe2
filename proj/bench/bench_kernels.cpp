// Serial reference kernels against the OpenMP kernels on the shapes the
// default network uses (a 12x12 map, batch of 256 or 1024 branch rows).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "symrl/kernels.hpp"

namespace k = symrl::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

k::ConvShape conv_shape(int batch) {
  k::ConvShape s;
  s.batch = batch;
  s.in_channels = 5;
  s.height = s.width = 12;
  s.out_channels = 8;
  s.kernel = 3;
  s.stride = 2;
  s.pad = 1;
  return s;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const k::ConvShape s = conv_shape(static_cast<int>(state.range(0)));
  const auto x = random_vector(s.input_size(), 1);
  const auto w = random_vector(s.weight_size(), 2);
  const auto b = random_vector(s.out_channels, 3);
  std::vector<double> y(s.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::conv2d_forward(s, x, w, b, y);
    else k::serial::conv2d_forward(s, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * s.batch);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const k::ConvShape s = conv_shape(static_cast<int>(state.range(0)));
  const auto x = random_vector(s.input_size(), 1);
  const auto w = random_vector(s.weight_size(), 2);
  const auto dy = random_vector(s.output_size(), 4);
  std::vector<double> dx(s.input_size()), dw(s.weight_size()), db(s.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::conv2d_backward(s, x, w, dy, dx, dw, db);
    else k::serial::conv2d_backward(s, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * s.batch);
}

template <bool Parallel>
void BM_AffineForward(benchmark::State& state) {
  const k::AffineShape s{static_cast<int>(state.range(0)), 146, 128};
  const auto x = random_vector(static_cast<std::size_t>(s.batch) * s.in, 1);
  const auto w = random_vector(static_cast<std::size_t>(s.out) * s.in, 2);
  const auto b = random_vector(s.out, 3);
  std::vector<double> y(static_cast<std::size_t>(s.batch) * s.out);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::affine_forward(s, x, w, b, y);
    else k::serial::affine_forward(s, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * s.batch);
}

template <bool Parallel>
void BM_AffineBackward(benchmark::State& state) {
  const k::AffineShape s{static_cast<int>(state.range(0)), 146, 128};
  const auto x = random_vector(static_cast<std::size_t>(s.batch) * s.in, 1);
  const auto w = random_vector(static_cast<std::size_t>(s.out) * s.in, 2);
  const auto dy = random_vector(static_cast<std::size_t>(s.batch) * s.out, 4);
  std::vector<double> dx(x.size()), dw(w.size()), db(s.out);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::affine_backward(s, x, w, dy, dx, dw, db);
    else k::serial::affine_backward(s, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * s.batch);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_AffineForward<false>)->Name("affine_forward/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_AffineForward<true>)->Name("affine_forward/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_AffineBackward<false>)->Name("affine_backward/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_AffineBackward<true>)->Name("affine_backward/parallel")->Arg(256)->Arg(1024);

int main(int argc, char** argv) {
  symrl::kernels::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
