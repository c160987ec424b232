// Serial reference vs OpenMP conv kernels at the shapes the model uses.
#include <benchmark/benchmark.h>

#include <vector>

#include "s4t/kernels.hpp"
#include "s4t/rng.hpp"

namespace {

using namespace s4t::kernels;

struct Buffers {
  ConvGeometry g;
  std::vector<float> input, weight, bias, output;
};

Buffers make(std::size_t batch, std::size_t cin, std::size_t hw, std::size_t cout) {
  Buffers b;
  b.g = conv_geometry({batch, cin, hw, hw}, {cout, cin, 3, 3}, 1, 1);
  s4t::Rng rng(7);
  b.input.resize(b.g.input_size());
  b.weight.resize(b.g.weight_size());
  for (float& v : b.input) v = static_cast<float>(rng.uniform(-1, 1));
  for (float& v : b.weight) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  b.bias.assign(cout, 0.1f);
  b.output.resize(b.g.output_size());
  return b;
}

// Args: batch, in channels, spatial side, out channels.
void shapes(benchmark::internal::Benchmark* bm) {
  bm->Args({8, 3, 64, 16})->Args({8, 16, 64, 32})->Args({8, 32, 64, 32})->Args({1, 32, 112, 32});
}

template <auto Forward>
void BM_Forward(benchmark::State& state) {
  Buffers b = make(state.range(0), state.range(1), state.range(2), state.range(3));
  for (auto _ : state) {
    Forward(b.g, b.input, b.weight, b.bias, b.output);
    benchmark::DoNotOptimize(b.output.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b.g.output_size()));
}

template <auto BackwardInput, auto BackwardWeight>
void BM_Backward(benchmark::State& state) {
  Buffers b = make(state.range(0), state.range(1), state.range(2), state.range(3));
  std::vector<float> grad_in(b.g.input_size()), grad_w(b.g.weight_size()), grad_b(b.g.out_channels);
  for (float& v : b.output) v = 0.01f;
  for (auto _ : state) {
    BackwardInput(b.g, b.output, b.weight, grad_in);
    BackwardWeight(b.g, b.output, b.input, grad_w, grad_b);
    benchmark::DoNotOptimize(grad_in.data());
    benchmark::DoNotOptimize(grad_w.data());
  }
}

}  // namespace

BENCHMARK(BM_Forward<serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward<parallel::conv2d_forward>)->Name("conv_forward/parallel")->Apply(shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Backward<serial::conv2d_backward_input, serial::conv2d_backward_weight>)
    ->Name("conv_backward/serial")->Apply(shapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Backward<parallel::conv2d_backward_input, parallel::conv2d_backward_weight>)
    ->Name("conv_backward/parallel")->Apply(shapes)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
