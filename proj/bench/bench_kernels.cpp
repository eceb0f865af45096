// Serial reference kernels against the OpenMP versions, on the layer shapes a
// training batch of 50 samples actually hits. Run with OMP_NUM_THREADS set to
// compare thread counts; on one core the two should be close.

#include <benchmark/benchmark.h>

#include <vector>

#include "jcnn/kernels.hpp"
#include "jcnn/model.hpp"
#include "jcnn/rng.hpp"

using namespace jcnn;
using namespace jcnn::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// {height, in_ch, out_ch, k}: intra 3x3 on 32x32, inter 1x1 on 20 planes,
// the 4x4 third block on 8x8.
const std::vector<std::vector<std::int64_t>> kConvShapes = {{32, 1, 2, 3}, {32, 20, 2, 1}, {16, 2, 4, 2},
                                                            {8, 4, 4, 4}};

ConvDims conv_dims(const benchmark::State& s) {
  const auto h = static_cast<std::size_t>(s.range(0)), k = static_cast<std::size_t>(s.range(3));
  return {50, h, h, static_cast<std::size_t>(s.range(1)), static_cast<std::size_t>(s.range(2)), k, k};
}

template <bool Omp>
void BM_ConvForward(benchmark::State& s) {
  const ConvDims d = conv_dims(s);
  const auto x = noise(d.input_size(), 1), w = noise(d.weight_size(), 2), b = noise(d.out_ch, 3);
  std::vector<float> y(d.output_size());
  for (auto _ : s) {
    if constexpr (Omp) omp::conv_forward<float>(d, x, w, b, y);
    else serial::conv_forward<float>(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * d.output_size() * d.in_ch * d.k1 * d.k2));
}

template <bool Omp>
void BM_ConvBackward(benchmark::State& s) {
  const ConvDims d = conv_dims(s);
  const auto x = noise(d.input_size(), 1), w = noise(d.weight_size(), 2), dy = noise(d.output_size(), 3);
  std::vector<float> dx(d.input_size()), dw(d.weight_size()), db(d.out_ch);
  for (auto _ : s) {
    if constexpr (Omp) omp::conv_backward<float>(d, x, w, dy, dx, dw, db);
    else serial::conv_backward<float>(d, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Omp>
void BM_AvgPool(benchmark::State& s) {
  const PoolDims d{50, 32, 32, 2};
  const auto x = noise(d.input_size(), 4);
  std::vector<float> y(d.output_size()), dx(d.input_size());
  for (auto _ : s) {
    if constexpr (Omp) {
      omp::avgpool_forward<float>(d, x, y);
      omp::avgpool_backward<float>(d, y, dx);
    } else {
      serial::avgpool_forward<float>(d, x, y);
      serial::avgpool_backward<float>(d, y, dx);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Omp>
void BM_Dense(benchmark::State& s) {
  const DenseDims d{50, 1344, 512};
  const auto x = noise(d.batch * d.in, 5), w = noise(d.in * d.out, 6), b = noise(d.out, 7);
  const auto dy = noise(d.batch * d.out, 8);
  std::vector<float> y(d.batch * d.out), dx(d.batch * d.in), dw(d.in * d.out), db(d.out);
  for (auto _ : s) {
    if constexpr (Omp) {
      omp::dense_forward<float>(d, x, w, b, y);
      omp::dense_backward<float>(d, x, w, dy, dx, dw, db);
    } else {
      serial::dense_forward<float>(d, x, w, b, y);
      serial::dense_backward<float>(d, x, w, dy, dx, dw, db);
    }
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Omp>
void BM_ChannelMoments(benchmark::State& s) {
  const std::size_t rows = 50 * 32 * 32, ch = 2;
  const auto x = noise(rows * ch, 9);
  std::vector<double> mean(ch), var(ch);
  for (auto _ : s) {
    if constexpr (Omp) omp::channel_moments<float>(rows, ch, x, mean, var);
    else serial::channel_moments<float>(rows, ch, x, mean, var);
    benchmark::DoNotOptimize(var.data());
  }
}

// One full SGD step of the 21-branch network (OpenMP kernels).
void BM_TrainStep(benchmark::State& s) {
  Network<float> net(NetworkConfig{}, 1);
  Tensor<float> batch({50, 32, 32, 20});
  const auto v = noise(batch.size(), 10);
  std::copy(v.begin(), v.end(), batch.storage().begin());
  std::vector<int> labels(50, 0);
  std::fill(labels.begin() + 25, labels.end(), 1);
  for (auto _ : s) {
    const auto logits = net.forward(batch, Mode::train);
    const auto sx = softmax_cross_entropy(logits, labels);
    net.backward(sx.grad_logits);
    sgd_step<float>(net.params(), 0.0f);
  }
}

}  // namespace

static void register_conv_shapes() {
  for (const auto& a : kConvShapes) {
    benchmark::RegisterBenchmark("conv_forward/serial", BM_ConvForward<false>)->Args(a);
    benchmark::RegisterBenchmark("conv_forward/omp", BM_ConvForward<true>)->Args(a);
    benchmark::RegisterBenchmark("conv_backward/serial", BM_ConvBackward<false>)->Args(a);
    benchmark::RegisterBenchmark("conv_backward/omp", BM_ConvBackward<true>)->Args(a);
  }
}

BENCHMARK(BM_AvgPool<false>)->Name("avgpool/serial");
BENCHMARK(BM_AvgPool<true>)->Name("avgpool/omp");
BENCHMARK(BM_Dense<false>)->Name("dense_1344x512/serial");
BENCHMARK(BM_Dense<true>)->Name("dense_1344x512/omp");
BENCHMARK(BM_ChannelMoments<false>)->Name("bn_moments/serial");
BENCHMARK(BM_ChannelMoments<true>)->Name("bn_moments/omp");
BENCHMARK(BM_TrainStep)->Name("train_step_batch50")->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  register_conv_shapes();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
