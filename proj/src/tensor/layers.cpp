#include "jcnn/layers.hpp"

#include <cmath>
#include <type_traits>
#include <limits>

#include "jcnn/kernels.hpp"

namespace jcnn {

namespace {

// Views a rank-3/rank-4 activation as (batch, H, W, D).
struct Nhwc {
  std::size_t b, h, w, d;
};

Nhwc as_nhwc(const Shape& s, const char* what) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  throw ShapeError(std::string(what) + ": expected [H,W,D] or [B,H,W,D], got " + shape_str(s));
}

Shape with_channels(const Shape& s, std::size_t channels) {
  Shape out = s;
  out.back() = channels;
  return out;
}

Shape pooled_shape(const Shape& s, const kernels::PoolDims& d) {
  Shape out = s;
  out[s.size() - 3] = d.out_height();
  out[s.size() - 2] = d.out_width();
  return out;
}

}  // namespace

template <class T>
Tensor<T> conv2d_same(const Tensor<T>& input, const ConvParams<T>& p) {
  const auto g = as_nhwc(input.shape(), "conv2d_same");
  require_rank(p.kernels.shape(), 4, "conv2d_same kernels");
  const auto& ks = p.kernels.shape();
  if (ks[2] != g.d)
    throw ShapeError("conv2d_same: input depth " + std::to_string(g.d) +
                     " does not match kernel input depth " + std::to_string(ks[2]));
  if (p.bias.size() != ks[3])
    throw ShapeError("conv2d_same: bias length " + std::to_string(p.bias.size()) +
                     " does not match kernel output depth " + std::to_string(ks[3]));
  const kernels::ConvDims d{g.b, g.h, g.w, g.d, ks[3], ks[0], ks[1]};
  Tensor<T> out(with_channels(input.shape(), ks[3]));
  kernels::omp::conv_forward<T>(d, input.data(), p.kernels.data(), p.bias.data(), out.data());
  return out;
}

template <class T>
ConvGrads<T> conv2d_same_backward(const Tensor<T>& input, const ConvParams<T>& p,
                                  const Tensor<T>& upstream) {
  const auto g = as_nhwc(input.shape(), "conv2d_same_backward");
  const auto& ks = p.kernels.shape();
  if (ks.size() != 4 || ks[2] != g.d || upstream.shape() != with_channels(input.shape(), ks[3]))
    throw ShapeError("conv2d_same_backward: inconsistent shapes " + shape_str(input.shape()) + ", " +
                     shape_str(ks) + ", " + shape_str(upstream.shape()));
  const kernels::ConvDims d{g.b, g.h, g.w, g.d, ks[3], ks[0], ks[1]};
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(ks), Tensor<T>(p.bias.shape())};
  kernels::omp::conv_backward<T>(d, input.data(), p.kernels.data(), upstream.data(),
                                 grads.input.data(), grads.kernels.data(), grads.bias.data());
  return grads;
}

template <class T>
BnState<T> BnState<T>::identity(std::size_t channels, double tau, double xi) {
  BnState s;
  s.gamma = Tensor<T>({channels}, T{1});
  s.beta = Tensor<T>({channels}, T{0});
  s.moving_mean = Tensor<T>({channels}, T{0});
  s.moving_var = Tensor<T>({channels}, T{1});
  s.tau = tau;
  s.xi = xi;
  return s;
}

template <class T>
void BnState<T>::validate() const {
  const std::size_t c = gamma.size();
  if (c == 0 || beta.size() != c || moving_mean.size() != c || moving_var.size() != c)
    throw ShapeError("BnState: parameter vectors must all have the same positive length");
  if (!(xi > 0.0)) throw std::invalid_argument("BnState: xi must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("BnState: tau must lie in (0,1)");
  for (std::size_t i = 0; i < c; ++i)
    if (moving_var[i] < 0) throw std::invalid_argument("BnState: negative moving variance");
}

template <class T>
Tensor<T> batchnorm(const Tensor<T>& batch, BnState<T>& state, Mode mode, BnCache<T>* cache) {
  state.validate();
  const auto g = as_nhwc(batch.shape(), "batchnorm");
  if (g.d != state.channels())
    throw ShapeError("batchnorm: input has " + std::to_string(g.d) + " channels, state has " +
                     std::to_string(state.channels()));
  const std::size_t channels = g.d;
  const std::size_t rows = batch.size() / channels;

  std::vector<double> mean(channels), var(channels);
  if (mode == Mode::train) {
    if (batch.rank() != 4 || g.b < 2)
      throw std::invalid_argument("batchnorm: train mode needs a batch of at least 2 samples");
    kernels::omp::channel_moments<T>(rows, channels, batch.data(), mean, var);
    const double tau = state.tau;
    for (std::size_t c = 0; c < channels; ++c) {
      if (state.updates == 0) {
        state.moving_mean[c] = static_cast<T>(mean[c]);
        state.moving_var[c] = static_cast<T>(var[c]);
      } else {
        state.moving_mean[c] = static_cast<T>(tau * state.moving_mean[c] + (1.0 - tau) * mean[c]);
        state.moving_var[c] = static_cast<T>(tau * state.moving_var[c] + (1.0 - tau) * var[c]);
      }
    }
    ++state.updates;
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.moving_mean[c];
      var[c] = state.moving_var[c];
    }
  }

  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.xi);

  Tensor<T> out(batch.shape());
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(batch.shape());
  const T* x = batch.data().data();
  T* y = out.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const T xh = static_cast<T>((x[i] - mean[c]) * inv_std[c]);
      y[i] = state.gamma[c] * xh + state.beta[c];
      if (cache) xhat[i] = xh;
    }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <class T>
BnGrads<T> batchnorm_backward(const BnCache<T>& cache, const BnState<T>& state,
                              const Tensor<T>& upstream) {
  if (!upstream.same_shape(cache.normalized))
    throw ShapeError("batchnorm_backward: upstream shape " + shape_str(upstream.shape()) +
                     " does not match cached activation " + shape_str(cache.normalized.shape()));
  const std::size_t channels = state.channels();
  const std::size_t rows = upstream.size() / channels;
  std::vector<double> sum_dy(channels), sum_dy_xhat(channels);
  kernels::omp::channel_grad_sums<T>(rows, channels, upstream.data(), cache.normalized.data(),
                                     sum_dy, sum_dy_xhat);

  BnGrads<T> g{Tensor<T>(upstream.shape()), Tensor<T>({channels}), Tensor<T>({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    g.gamma[c] = static_cast<T>(sum_dy_xhat[c]);
    g.beta[c] = static_cast<T>(sum_dy[c]);
  }
  const T* dy = upstream.data().data();
  const T* xh = cache.normalized.data().data();
  T* dx = g.input.data().data();
  const double n = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const double scale = state.gamma[c] * cache.inv_std[c];
      if (cache.mode == Mode::train)
        dx[i] = static_cast<T>(scale * (dy[i] - sum_dy[c] / n - xh[i] * sum_dy_xhat[c] / n));
      else
        dx[i] = static_cast<T>(scale * dy[i]);
    }
  return g;
}

template <class T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  if constexpr (std::is_same_v<T, float>) {
    // (1 - e^{-2|x|}) / (1 + e^{-2|x|}) with expf; cannot overflow. Near zero the
    // difference cancels, so a short odd series takes over (error < 1e-12).
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float a = std::abs(x[i]);
      float r;
      if (a < 0.04f) {
        const double d = a, d2 = d * d;
        r = static_cast<float>(d * (1.0 + d2 * (-1.0 / 3 + d2 * (2.0 / 15 + d2 * (-17.0 / 315)))));
      } else {
        const float t = std::exp(-2.0f * a);
        r = (1.0f - t) / (1.0f + t);
      }
      y[i] = x[i] < 0 ? -r : r;
    }
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  }
  return y;
}

template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& upstream) {
  if (!y.same_shape(upstream)) throw ShapeError("tanh_backward: shape mismatch");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (T{1} - y[i] * y[i]) * upstream[i];
  return dx;
}

template <class T>
Tensor<T> relu_act(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  if (!x.same_shape(upstream)) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? upstream[i] : T{0};
  return dx;
}

namespace {

kernels::PoolDims pool_dims(const Shape& s, const char* what) {
  const auto g = as_nhwc(s, what);
  return {g.b, g.h, g.w, g.d};
}

}  // namespace

template <class T>
Tensor<T> avgpool_3x3_s2(const Tensor<T>& input) {
  const auto d = pool_dims(input.shape(), "avgpool_3x3_s2");
  Tensor<T> out(pooled_shape(input.shape(), d));
  kernels::omp::avgpool_forward<T>(d, input.data(), out.data());
  return out;
}

template <class T>
Tensor<T> avgpool_3x3_s2_backward(const Shape& input_shape, const Tensor<T>& upstream) {
  const auto d = pool_dims(input_shape, "avgpool_3x3_s2_backward");
  if (upstream.shape() != pooled_shape(input_shape, d))
    throw ShapeError("avgpool backward: upstream shape " + shape_str(upstream.shape()));
  Tensor<T> dx(input_shape);
  kernels::omp::avgpool_backward<T>(d, upstream.data(), dx.data());
  return dx;
}

template <class T>
Tensor<T> maxpool_3x3_s2(const Tensor<T>& input, std::vector<std::uint32_t>* argmax) {
  const auto d = pool_dims(input.shape(), "maxpool_3x3_s2");
  Tensor<T> out(pooled_shape(input.shape(), d));
  std::vector<std::uint32_t> local;
  auto& idx = argmax ? *argmax : local;
  idx.assign(out.size(), 0);
  kernels::omp::maxpool_forward<T>(d, input.data(), out.data(), idx);
  return out;
}

template <class T>
Tensor<T> maxpool_3x3_s2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                  const Tensor<T>& upstream) {
  const auto d = pool_dims(input_shape, "maxpool_3x3_s2_backward");
  if (upstream.shape() != pooled_shape(input_shape, d) || argmax.size() != upstream.size())
    throw ShapeError("maxpool backward: upstream/argmax do not match input " + shape_str(input_shape));
  Tensor<T> dx(input_shape);
  kernels::omp::maxpool_backward<T>(d, upstream.data(), argmax, dx.data());
  return dx;
}

namespace {

template <class T>
kernels::DenseDims dense_dims(const Tensor<T>& input, const FcParams<T>& p, const char* what) {
  require_rank(p.weights.shape(), 2, what);
  const std::size_t m = p.weights.dim(0), n = p.weights.dim(1);
  std::size_t batch;
  if (input.rank() == 1 && input.dim(0) == m)
    batch = 1;
  else if (input.rank() == 2 && input.dim(1) == m)
    batch = input.dim(0);
  else
    throw ShapeError(std::string(what) + ": input " + shape_str(input.shape()) +
                     " does not match weights " + shape_str(p.weights.shape()));
  if (p.bias.size() != n) throw ShapeError(std::string(what) + ": bias length mismatch");
  return {batch, m, n};
}

}  // namespace

template <class T>
Tensor<T> fc(const Tensor<T>& input, const FcParams<T>& p) {
  const auto d = dense_dims(input, p, "fc");
  Tensor<T> out(input.rank() == 1 ? Shape{d.out} : Shape{d.batch, d.out});
  kernels::omp::dense_forward<T>(d, input.data(), p.weights.data(), p.bias.data(), out.data());
  return out;
}

template <class T>
FcGrads<T> fc_backward(const Tensor<T>& input, const FcParams<T>& p, const Tensor<T>& upstream) {
  const auto d = dense_dims(input, p, "fc_backward");
  if (upstream.size() != d.batch * d.out) throw ShapeError("fc_backward: upstream size mismatch");
  FcGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(p.weights.shape()), Tensor<T>(p.bias.shape())};
  kernels::omp::dense_backward<T>(d, input.data(), p.weights.data(), upstream.data(),
                                  g.input.data(), g.weights.data(), g.bias.data());
  return g;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 && logits.rank() != 2)
    throw ShapeError("softmax: expected [C] or [B,C], got " + shape_str(logits.shape()));
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / classes;
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data().data() + r * classes;
    T* out = p.data().data() + r * classes;
    T mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
    double sum = 0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(z[c] - mx));
    for (std::size_t c = 0; c < classes; ++c)
      out[c] = static_cast<T>(std::exp(static_cast<double>(z[c] - mx)) / sum);
  }
  return p;
}

template <class T>
double cross_entropy(std::span<const T> p, std::span<const T> q) {
  if (p.size() != q.size() || p.empty()) throw ShapeError("cross_entropy: length mismatch");
  std::size_t ones = 0;
  for (auto v : q) {
    if (v == T{1})
      ++ones;
    else if (v != T{0})
      throw std::invalid_argument("cross_entropy: ground truth must be one-hot");
  }
  if (ones != 1) throw std::invalid_argument("cross_entropy: ground truth must be one-hot");
  double loss = 0;
  for (std::size_t n = 0; n < p.size(); ++n)
    if (q[n] != T{0}) loss -= std::log(std::max(static_cast<double>(p[n]), 1e-12));
  return loss;
}

template <class T>
SoftmaxXent<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("softmax_cross_entropy: label count mismatch");
  SoftmaxXent<T> r;
  r.probabilities = softmax(logits);
  r.grad_logits = Tensor<T>(logits.shape());
  double total = 0;
  const T inv_b = T{1} / static_cast<T>(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    for (std::size_t c = 0; c < classes; ++c) {
      const T p = r.probabilities(s, c);
      const T q = static_cast<std::size_t>(label) == c ? T{1} : T{0};
      r.grad_logits(s, c) = (p - q) * inv_b;
    }
    total -= std::log(std::max(static_cast<double>(r.probabilities(s, label)), 1e-12));
  }
  r.loss = total / static_cast<double>(batch);
  return r;
}

template <class T>
void sgd_step(std::span<const ParamRef<T>> params, double alpha) {
  if (alpha < 0) throw std::invalid_argument("sgd_step: learning rate must be non-negative");
  for (const auto& p : params)
    if (!p.value || !p.grad || p.value->shape() != p.grad->shape())
      throw ShapeError("sgd_step: gradient for '" + p.name + "' does not match its parameter");
  for (const auto& p : params) {
    auto w = p.value->data();
    auto g = p.grad->data();
    const T a = static_cast<T>(alpha);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= a * g[i];
  }
}

#define JCNN_LAYER_INSTANTIATE(T)                                                              \
  template Tensor<T> conv2d_same<T>(const Tensor<T>&, const ConvParams<T>&);                   \
  template ConvGrads<T> conv2d_same_backward<T>(const Tensor<T>&, const ConvParams<T>&,         \
                                                const Tensor<T>&);                             \
  template struct BnState<T>;                                                                  \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BnState<T>&, Mode, BnCache<T>*);          \
  template BnGrads<T> batchnorm_backward<T>(const BnCache<T>&, const BnState<T>&,              \
                                            const Tensor<T>&);                                 \
  template Tensor<T> tanh_act<T>(const Tensor<T>&);                                            \
  template Tensor<T> tanh_backward<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> relu_act<T>(const Tensor<T>&);                                            \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> avgpool_3x3_s2<T>(const Tensor<T>&);                                      \
  template Tensor<T> avgpool_3x3_s2_backward<T>(const Shape&, const Tensor<T>&);               \
  template Tensor<T> maxpool_3x3_s2<T>(const Tensor<T>&, std::vector<std::uint32_t>*);         \
  template Tensor<T> maxpool_3x3_s2_backward<T>(const Shape&, std::span<const std::uint32_t>,  \
                                                const Tensor<T>&);                             \
  template Tensor<T> fc<T>(const Tensor<T>&, const FcParams<T>&);                              \
  template FcGrads<T> fc_backward<T>(const Tensor<T>&, const FcParams<T>&, const Tensor<T>&);  \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                             \
  template double cross_entropy<T>(std::span<const T>, std::span<const T>);                    \
  template SoftmaxXent<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);    \
  template void sgd_step<T>(std::span<const ParamRef<T>>, double);

JCNN_LAYER_INSTANTIATE(float)
JCNN_LAYER_INSTANTIATE(double)

}  // namespace jcnn
