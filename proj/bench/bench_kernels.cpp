#include <benchmark/benchmark.h>

#include <vector>

#include "ccl/kernels.hpp"
#include "ccl/model.hpp"
#include "ccl/rng.hpp"

using namespace ccl;
namespace k = ccl::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// Block-1 sized convolution at batch 32: 32x32x3 -> 32x32x8 and the
// block-2 shape 16x16x8 -> 16x16x16.
k::ConvGeometry conv_geometry(int which) {
  k::ConvGeometry g;
  g.batch = 32;
  g.kernel = 3;
  g.pad = 1;
  if (which == 0) {
    g.in_h = g.in_w = 32;
    g.in_c = 3;
    g.out_c = 8;
  } else {
    g.in_h = g.in_w = 16;
    g.in_c = 8;
    g.out_c = 16;
  }
  return g;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<int>(state.range(0)));
  const auto in = random_vec(g.batch * g.in_sample(), 1);
  const auto w = random_vec(g.weight_size(), 2);
  const auto b = random_vec(g.out_c, 3);
  std::vector<float> out(g.batch * g.out_sample());
  for (auto _ : state) {
    if constexpr (Parallel) k::omp::conv2d_forward<float>(g, in, w, b, out);
    else k::serial::conv2d_forward<float>(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.batch));
}

template <bool Parallel>
void BM_ConvBackwardParams(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<int>(state.range(0)));
  const auto in = random_vec(g.batch * g.in_sample(), 1);
  const auto dout = random_vec(g.batch * g.out_sample(), 2);
  std::vector<float> dw(g.weight_size()), db(g.out_c);
  for (auto _ : state) {
    if constexpr (Parallel) k::omp::conv2d_backward_params<float>(g, in, dout, dw, db);
    else k::serial::conv2d_backward_params<float>(g, in, dout, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.batch));
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const k::DenseGeometry g{256, 512, 256};
  const auto in = random_vec(g.batch * g.in, 1);
  const auto w = random_vec(g.in * g.out, 2);
  const auto b = random_vec(g.out, 3);
  std::vector<float> out(g.batch * g.out);
  for (auto _ : state) {
    if constexpr (Parallel) k::omp::dense_forward<float>(g, in, w, b, out);
    else k::serial::dense_forward<float>(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <Backend B>
void BM_TrainStep(benchmark::State& state) {
  ClassRegistry reg;
  for (const auto* l : {"a", "b", "c", "d", "e", "f"}) reg.add(l, ClassKind::kBasic);
  auto model = make_model(BackboneConfig{}, reg, 7);
  const auto x = random_vec(32 * 32 * 32 * 3, 4);
  Tensor batch({32, 32, 32, 3});
  std::copy(x.begin(), x.end(), batch.data());
  for (auto _ : state) {
    auto fwd = forward(model.params, model.spec, batch, B);
    Tensor seed(fwd.logits.shape());
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = 1.0f / static_cast<float>(seed.size());
    BackwardOptions opts;
    opts.backend = B;
    auto grads = backward(fwd.tape, model.params, model.spec, seed, opts);
    benchmark::DoNotOptimize(grads.params.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 32));
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/omp")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardParams<false>)->Name("conv_backward_params/serial")->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardParams<true>)->Name("conv_backward_params/omp")->Arg(0)->Arg(1);
BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/serial");
BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/omp");
BENCHMARK(BM_TrainStep<Backend::kSerial>)->Name("train_step/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep<Backend::kParallel>)->Name("train_step/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
