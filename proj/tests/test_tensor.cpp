#include <gtest/gtest.h>

#include <cmath>

#include "jcnn/errors.hpp"
#include "jcnn/grad_check.hpp"
#include "jcnn/kernels.hpp"
#include "jcnn/layers.hpp"
#include "layer_fragments.hpp"
#include "test_util.hpp"

using namespace jcnn;
using jcnn::testing::BnFrag;
using jcnn::testing::ConvFrag;
using jcnn::testing::ElementFrag;
using jcnn::testing::FcFrag;
using jcnn::testing::random_conv;
using jcnn::testing::XentFrag;
using jcnn::testing::random_tensor;

namespace {

template <class T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// Zero-padded correlation with the kernel flipped: an independent restatement
// of the SAME convolution. Indices that fall off the padded array read zero.
Tensor<double> conv_oracle(const Tensor<double>& x, const ConvParams<double>& p) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), D1 = x.dim(3);
  const std::size_t K1 = p.kernels.dim(0), K2 = p.kernels.dim(1), D2 = p.kernels.dim(3);
  const std::size_t pt = K1 / 2, pl = K2 / 2;
  const std::size_t PH = H + K1 - 1, PW = W + K2 - 1;
  Tensor<double> out({B, H, W, D2});
  for (std::size_t s = 0; s < B; ++s) {
    std::vector<double> pad(PH * PW * D1, 0.0);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        for (std::size_t i = 0; i < D1; ++i) pad[((r + pt) * PW + c + pl) * D1 + i] = x(s, r, c, i);
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v)
        for (std::size_t j = 0; j < D2; ++j) {
          double acc = p.bias[j];
          // flipped kernel index a = K1-1-m walks the padded window forward
          for (std::size_t a = 0; a < K1; ++a)
            for (std::size_t b = 0; b < K2; ++b)
              for (std::size_t i = 0; i < D1; ++i) {
                const std::size_t m = K1 - 1 - a, n = K2 - 1 - b;
                const std::ptrdiff_t pr = static_cast<std::ptrdiff_t>(u + a) - static_cast<std::ptrdiff_t>(K1 - 1) +
                                          static_cast<std::ptrdiff_t>(2 * pt);
                const std::ptrdiff_t pc = static_cast<std::ptrdiff_t>(v + b) - static_cast<std::ptrdiff_t>(K2 - 1) +
                                          static_cast<std::ptrdiff_t>(2 * pl);
                if (pr < 0 || pc < 0 || pr >= static_cast<std::ptrdiff_t>(PH) ||
                    pc >= static_cast<std::ptrdiff_t>(PW))
                  continue;
                acc += pad[(static_cast<std::size_t>(pr) * PW + static_cast<std::size_t>(pc)) * D1 + i] *
                       p.kernels(m, n, i, j);
              }
          out(s, u, v, j) = acc;
        }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial vs OpenMP kernels

struct Geometry {
  std::size_t b, h, w, d1, d2, k1, k2;
};

class KernelParity : public ::testing::TestWithParam<Geometry> {};

TEST_P(KernelParity, ConvForwardBackwardMatchesSerial) {
  const Geometry g = GetParam();
  const kernels::ConvDims d{g.b, g.h, g.w, g.d1, g.d2, g.k1, g.k2};
  for (int precision = 0; precision < 2; ++precision) {
    auto run = [&]<class T>(T, double tol) {
      const auto x = random_tensor<T>({d.input_size()}, 11);
      const auto w = random_tensor<T>({d.weight_size()}, 12);
      const auto b = random_tensor<T>({d.out_ch}, 13);
      const auto dy = random_tensor<T>({d.output_size()}, 14);
      std::vector<T> y1(d.output_size()), y2(d.output_size());
      kernels::serial::conv_forward<T>(d, x.data(), w.data(), b.data(), y1);
      kernels::omp::conv_forward<T>(d, x.data(), w.data(), b.data(), y2);
      EXPECT_LE(max_abs_diff<T>(y1, y2), tol);
      std::vector<T> dx1(d.input_size()), dx2(d.input_size()), dw1(d.weight_size()), dw2(d.weight_size());
      std::vector<T> db1(d.out_ch), db2(d.out_ch);
      kernels::serial::conv_backward<T>(d, x.data(), w.data(), dy.data(), dx1, dw1, db1);
      kernels::omp::conv_backward<T>(d, x.data(), w.data(), dy.data(), dx2, dw2, db2);
      EXPECT_LE(max_abs_diff<T>(dx1, dx2), tol);
      EXPECT_LE(max_abs_diff<T>(dw1, dw2), tol * static_cast<double>(g.b * g.h * g.w));
      EXPECT_LE(max_abs_diff<T>(db1, db2), tol * static_cast<double>(g.b * g.h * g.w));
    };
    if (precision == 0) run(double{}, 1e-12);
    else run(float{}, 2e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, KernelParity,
                         ::testing::Values(Geometry{2, 32, 32, 1, 2, 3, 3},   // first intra block
                                           Geometry{2, 16, 16, 2, 4, 2, 2},   // second block
                                           Geometry{2, 8, 8, 4, 4, 4, 4},     // third block
                                           Geometry{2, 32, 32, 20, 2, 1, 1},  // inter fusion
                                           Geometry{2, 32, 32, 2, 4, 3, 3},   // inter first block
                                           Geometry{3, 5, 7, 3, 2, 3, 2},     // generic path
                                           Geometry{1, 1, 1, 1, 1, 4, 4}));

TEST(KernelParity, PoolDenseAndMoments) {
  const kernels::PoolDims pd{3, 9, 6, 4};
  const auto x = random_tensor<double>({pd.input_size()}, 3);
  const auto dy = random_tensor<double>({pd.output_size()}, 4);
  std::vector<double> a(pd.output_size()), b(pd.output_size());
  kernels::serial::avgpool_forward<double>(pd, x.data(), a);
  kernels::omp::avgpool_forward<double>(pd, x.data(), b);
  EXPECT_LE(max_abs_diff<double>(a, b), 1e-14);
  std::vector<double> ga(pd.input_size()), gb(pd.input_size());
  kernels::serial::avgpool_backward<double>(pd, dy.data(), ga);
  kernels::omp::avgpool_backward<double>(pd, dy.data(), gb);
  EXPECT_LE(max_abs_diff<double>(ga, gb), 1e-14);

  std::vector<std::uint32_t> ia(pd.output_size()), ib(pd.output_size());
  kernels::serial::maxpool_forward<double>(pd, x.data(), a, ia);
  kernels::omp::maxpool_forward<double>(pd, x.data(), b, ib);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ia, ib);
  kernels::serial::maxpool_backward<double>(pd, dy.data(), ia, ga);
  kernels::omp::maxpool_backward<double>(pd, dy.data(), ib, gb);
  EXPECT_EQ(ga, gb);

  const kernels::DenseDims dd{5, 1344, 512};
  const auto fx = random_tensor<float>({dd.batch * dd.in}, 5);
  const auto fw = random_tensor<float>({dd.in * dd.out}, 6);
  const auto fb = random_tensor<float>({dd.out}, 7);
  const auto fdy = random_tensor<float>({dd.batch * dd.out}, 8);
  std::vector<float> y1(dd.batch * dd.out), y2(dd.batch * dd.out);
  kernels::serial::dense_forward<float>(dd, fx.data(), fw.data(), fb.data(), y1);
  kernels::omp::dense_forward<float>(dd, fx.data(), fw.data(), fb.data(), y2);
  EXPECT_LE(max_abs_diff<float>(y1, y2), 1e-3);
  std::vector<float> dx1(dd.batch * dd.in), dx2(dd.batch * dd.in), dw1(dd.in * dd.out), dw2(dd.in * dd.out),
      db1(dd.out), db2(dd.out);
  kernels::serial::dense_backward<float>(dd, fx.data(), fw.data(), fdy.data(), dx1, dw1, db1);
  kernels::omp::dense_backward<float>(dd, fx.data(), fw.data(), fdy.data(), dx2, dw2, db2);
  EXPECT_LE(max_abs_diff<float>(dx1, dx2), 1e-3);
  EXPECT_LE(max_abs_diff<float>(dw1, dw2), 1e-5);
  EXPECT_LE(max_abs_diff<float>(db1, db2), 1e-5);

  const auto mx = random_tensor<double>({1000 * 3}, 9);
  std::vector<double> m1(3), v1(3), m2(3), v2(3);
  kernels::serial::channel_moments<double>(1000, 3, mx.data(), m1, v1);
  kernels::omp::channel_moments<double>(1000, 3, mx.data(), m2, v2);
  EXPECT_LE(max_abs_diff<double>(m1, m2), 1e-14);
  EXPECT_LE(max_abs_diff<double>(v1, v2), 1e-14);
}

// ---------------------------------------------------------------------------
// Layer semantics

TEST(Conv, MatchesPaddedOracle) {
  for (auto [k1, k2] : {std::pair{3, 3}, {2, 2}, {4, 4}, {1, 1}, {3, 2}}) {
    const auto x = random_tensor<double>({2, 6, 5, 3}, 21);
    const auto p = random_conv(k1, k2, 3, 2, 22);
    const auto y = conv2d_same(x, p);
    const auto o = conv_oracle(x, p);
    ASSERT_EQ(y.shape(), o.shape());
    EXPECT_LE(max_abs_diff<double>(y.data(), o.data()), 1e-12) << k1 << "x" << k2;
  }
}

TEST(Conv, EvenKernelTapPlacement) {
  // tap (m,n) reads (u - m + 1, v - n + 1) for a 2x2 kernel
  Tensor<double> x({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  ConvParams<double> p{Tensor<double>({2, 2, 1, 1}), Tensor<double>({1})};
  p.kernels(0, 0, 0, 0) = 1;
  auto y = conv2d_same(x, p);
  EXPECT_EQ(y.storage(), (std::vector<double>{4, 0, 0, 0}));
  p.kernels(0, 0, 0, 0) = 0;
  p.kernels(1, 1, 0, 0) = 1;
  y = conv2d_same(x, p);
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Conv, RejectsChannelMismatch) {
  const auto x = random_tensor<double>({1, 4, 4, 3}, 1);
  const auto p = random_conv(3, 3, 2, 2, 2);
  EXPECT_THROW(conv2d_same(x, p), ShapeError);
}

TEST(Pool, AverageExcludesPadding) {
  // 4x4 ramp -> 2x2; windows rows/cols {0,1,2} and {2,3}
  Tensor<double> x({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  const auto y = avgpool_3x3_s2(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_DOUBLE_EQ(y[0], (0 + 1 + 2 + 4 + 5 + 6 + 8 + 9 + 10) / 9.0);
  EXPECT_DOUBLE_EQ(y[1], (2 + 3 + 6 + 7 + 10 + 11) / 6.0);
  EXPECT_DOUBLE_EQ(y[3], (10 + 11 + 14 + 15) / 4.0);
}

TEST(Pool, OutputExtentIsCeilHalf) {
  for (std::size_t n : {1, 2, 3, 4, 5, 8, 16, 31, 32}) {
    const auto y = avgpool_3x3_s2(random_tensor<double>({1, n, n, 2}, n));
    EXPECT_EQ(y.dim(1), (n + 1) / 2);
  }
}

TEST(Pool, MaxTieGoesToFirstCell) {
  Tensor<double> x({1, 3, 3, 1}, 7.0);
  std::vector<std::uint32_t> arg;
  const auto y = maxpool_3x3_s2(x, &arg);
  ASSERT_EQ(y.size(), 4u);
  // 3x3 input: total pad 2, one before; output (0,0) window starts at (-1,-1)
  EXPECT_EQ(arg[0], 0u);
  EXPECT_DOUBLE_EQ(y[0], 7.0);
}

TEST(BatchNorm, TrainModeNormalizesAndSeedsMovingStats) {
  auto x = random_tensor<double>({8, 4, 4, 3}, 31, -2, 5);
  auto st = BnState<double>::identity(3);
  st.gamma.fill(2.0);
  st.beta.fill(0.5);
  BnCache<double> cache;
  const auto y = batchnorm(x, st, Mode::train, &cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0, xm = 0, xv = 0;
    const std::size_t n = 8 * 16;
    for (std::size_t r = 0; r < n; ++r) {
      mean += y[r * 3 + c];
      xm += x[r * 3 + c];
    }
    mean /= n;
    xm /= n;
    for (std::size_t r = 0; r < n; ++r) {
      var += (y[r * 3 + c] - mean) * (y[r * 3 + c] - mean);
      xv += (x[r * 3 + c] - xm) * (x[r * 3 + c] - xm);
    }
    var /= n;
    xv /= n;
    EXPECT_NEAR(mean, 0.5, 1e-12);
    // gamma * sqrt(var / (var + xi))
    EXPECT_NEAR(var, 4.0 * xv / (xv + 0.01), 1e-9);
    EXPECT_NEAR(st.moving_mean[c], xm, 1e-12);
    EXPECT_NEAR(st.moving_var[c], xv, 1e-12);
  }
  EXPECT_EQ(st.updates, 1u);

  // second batch follows tau
  const auto before = st.moving_mean;
  auto x2 = random_tensor<double>({8, 4, 4, 3}, 32, 10, 12);
  batchnorm(x2, st, Mode::train);
  double m2 = 0;
  for (std::size_t r = 0; r < 128; ++r) m2 += x2[r * 3];
  m2 /= 128;
  EXPECT_NEAR(st.moving_mean[0], 0.999 * before[0] + 0.001 * m2, 1e-12);
}

TEST(BatchNorm, InferModeUsesMovingStatsAndLeavesState) {
  auto st = BnState<double>::identity(2);
  st.moving_mean = Tensor<double>({2}, std::vector<double>{1.0, -1.0});
  st.moving_var = Tensor<double>({2}, std::vector<double>{4.0, 0.25});
  st.updates = 5;
  const auto saved = st.moving_mean;
  Tensor<double> x({1, 1, 1, 2}, std::vector<double>{3.0, 0.0});
  const auto y = batchnorm(x, st, Mode::infer);
  EXPECT_NEAR(y[0], 2.0 / std::sqrt(4.01), 1e-12);
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(0.26), 1e-12);
  EXPECT_EQ(st.moving_mean, saved);
  EXPECT_EQ(st.updates, 5u);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(99);
  Tensor<double> logits({10000, 2});
  for (auto& v : logits.storage()) v = rng.uniform(-50, 50);
  const auto p = softmax(logits);
  for (std::size_t i = 0; i < 10000; ++i) EXPECT_NEAR(p(i, 0) + p(i, 1), 1.0, 1e-6);
  Tensor<float> big({1, 2}, std::vector<float>{1000.f, -1000.f});
  const auto pb = softmax(big);
  EXPECT_TRUE(pb.all_finite());
  EXPECT_FLOAT_EQ(pb[0], 1.0f);
}

TEST(Softmax, CrossEntropyClampsAndAverages) {
  const std::vector<double> p{0.0, 1.0}, q{1.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(p, q), -std::log(1e-12), 1e-9);
  Tensor<double> logits({2, 2}, std::vector<double>{0, 0, 2, 0});
  const std::vector<int> y{0, 1};
  const auto r = softmax_cross_entropy(logits, y);
  const double p1 = 1.0 / (1.0 + std::exp(2.0));
  EXPECT_NEAR(r.loss, 0.5 * (std::log(2.0) - std::log(p1)), 1e-12);
  EXPECT_NEAR(r.grad_logits(0, 0), (0.5 - 1.0) / 2, 1e-12);
  EXPECT_NEAR(r.grad_logits(1, 1), (p1 - 1.0) / 2, 1e-12);
}

TEST(Activations, TanhFloatPathTracksDouble) {
  Tensor<float> x({2001});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = -10.f + 0.01f * static_cast<float>(i);
  const auto y = tanh_act(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::tanh(static_cast<double>(x[i])), 4e-7);
  Tensor<double> r({3}, std::vector<double>{-1, 0, 2});
  EXPECT_EQ(relu_act(r).storage(), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(relu_backward(r, Tensor<double>({3}, 1.0)).storage(), (std::vector<double>{0, 0, 1}));
}

TEST(Sgd, StepsAgainstGradient) {
  Tensor<double> w({2}, std::vector<double>{1, 2}), g({2}, std::vector<double>{0.5, -1});
  const std::vector<ParamRef<double>> ps{{"w", &w, &g}};
  sgd_step<double>(ps, 0.1);
  EXPECT_DOUBLE_EQ(w[0], 0.95);
  EXPECT_DOUBLE_EQ(w[1], 2.1);
}

// ---------------------------------------------------------------------------
// Per-layer gradient checks, each below 1e-4

TEST(GradCheck, Conv) {
  for (auto [k1, k2] : {std::pair{3, 3}, {2, 2}, {4, 4}, {1, 1}}) {
    ConvFrag f{random_conv(k1, k2, 2, 3, 40), {}, random_tensor<double>({2, 5, 6, 3}, 41), {}};
    const auto rep = grad_check(f, random_tensor<double>({2, 5, 6, 2}, 42), 1e-4);
    EXPECT_TRUE(rep.passed) << k1 << "x" << k2 << " worst " << rep.worst << " " << rep.max_rel_error;
  }
}

TEST(GradCheck, BatchNorm) {
  BnFrag f;
  f.st = BnState<double>::identity(3);
  f.st.gamma = random_tensor<double>({3}, 50, 0.5, 2.0);
  f.st.beta = random_tensor<double>({3}, 51);
  f.r = random_tensor<double>({4, 3, 3, 3}, 52);
  const auto rep = grad_check(f, random_tensor<double>({4, 3, 3, 3}, 53, -3, 3), 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst << " " << rep.max_rel_error;
}

TEST(GradCheck, ActivationsAndPools) {
  const auto r = random_tensor<double>({2, 7, 6, 2}, 60);
  const auto x = random_tensor<double>({2, 7, 6, 2}, 61, -2, 2);
  auto tanh_f = ElementFrag{[](const Tensor<double>& a) { return tanh_act(a); },
                            [](const Tensor<double>&, const Tensor<double>& y, const Tensor<double>& u) {
                              return tanh_backward(y, u);
                            },
                            r, {}, {}};
  EXPECT_TRUE(grad_check(tanh_f, x, 1e-4).passed);

  auto relu_f = ElementFrag{[](const Tensor<double>& a) { return relu_act(a); },
                            [](const Tensor<double>& a, const Tensor<double>&, const Tensor<double>& u) {
                              return relu_backward(a, u);
                            },
                            r, {}, {}};
  auto xr = x;
  for (auto& v : xr.storage())
    if (std::abs(v) < 1e-3) v = 0.5;  // stay off the kink
  EXPECT_TRUE(grad_check(relu_f, xr, 1e-4).passed);

  const auto rp = random_tensor<double>({2, 4, 3, 2}, 62);
  auto avg_f = ElementFrag{[](const Tensor<double>& a) { return avgpool_3x3_s2(a); },
                           [](const Tensor<double>& a, const Tensor<double>&, const Tensor<double>& u) {
                             return avgpool_3x3_s2_backward(a.shape(), u);
                           },
                           rp, {}, {}};
  EXPECT_TRUE(grad_check(avg_f, x, 1e-4).passed);

  std::vector<std::uint32_t> arg;
  auto max_f = ElementFrag{[&](const Tensor<double>& a) { return maxpool_3x3_s2(a, &arg); },
                           [&](const Tensor<double>& a, const Tensor<double>&, const Tensor<double>& u) {
                             return maxpool_3x3_s2_backward(a.shape(), arg, u);
                           },
                           rp, {}, {}};
  GradCheckOptions opt;
  opt.step = 1e-6;  // random inputs: no two window values within 2e-6 of each other with high probability
  EXPECT_TRUE(grad_check(max_f, x, 1e-4, opt).passed);
}

TEST(GradCheck, FullyConnectedAndSoftmaxLoss) {
  FcFrag f{{random_tensor<double>({7, 3}, 70), random_tensor<double>({3}, 71)}, {}, random_tensor<double>({4, 3}, 72),
           {}};
  EXPECT_TRUE(grad_check(f, random_tensor<double>({4, 7}, 73), 1e-4).passed);

  XentFrag x{{0, 1, 1, 0, 1}, {}};
  const auto rep = grad_check(x, random_tensor<double>({5, 2}, 74, -3, 3), 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradCheck, DetectsAWrongGradient) {
  struct Broken {
    Tensor<double> x;
    double loss(const Tensor<double>& in) {
      x = in;
      double s = 0;
      for (double v : in.data()) s += v * v;
      return s;
    }
    Tensor<double> backward() { return x; }  // should be 2x
    std::vector<ParamRef<double>> params() { return {}; }
  } b;
  EXPECT_FALSE(grad_check(b, random_tensor<double>({5}, 1), 1e-4).passed);
}
