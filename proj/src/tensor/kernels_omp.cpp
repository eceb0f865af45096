#include "jcnn/kernels.hpp"

#include <omp.h>

#include <array>
#include <limits>
#include <type_traits>
#include <vector>

#include "kernel_instantiations.hpp"

namespace jcnn::kernels::omp {

namespace {

// Row chunk for per-channel reductions. Fixed, so the merge order (and the
// rounding) is the same for any thread count.
constexpr std::size_t kReduceChunk = 2048;

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 14;

}  // namespace

namespace {

// Tap range [lo, hi) of a kernel axis that lands inside [0, extent) for
// output coordinate u, where the tap m reads u - m + offset.
inline void valid_taps(std::ptrdiff_t u, std::ptrdiff_t offset, std::ptrdiff_t extent, std::size_t k,
                       std::size_t& lo, std::size_t& hi) {
  const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, u + offset - extent + 1);
  const std::ptrdiff_t b = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(k), u + offset + 1);
  lo = static_cast<std::size_t>(a);
  hi = static_cast<std::size_t>(std::max(a, b));
}

// K1_/K2_/IN_/OUT_ fix the geometry at compile time; 0 means "read from d".
// All three passes walk whole output rows so the innermost loop runs over
// contiguous columns; each output still sums its taps in (m, n, i) order.
template <class T, std::size_t K1_, std::size_t K2_, std::size_t IN_, std::size_t OUT_>
void conv_forward_impl(const ConvDims& d, const T* __restrict x, const T* __restrict w, const T* __restrict b,
                       T* __restrict y) {
  const auto H = static_cast<std::ptrdiff_t>(d.height);
  const auto W = static_cast<std::ptrdiff_t>(d.width);
  const std::size_t k1 = K1_ ? K1_ : d.k1;
  const std::size_t k2 = K2_ ? K2_ : d.k2;
  const std::size_t in = IN_ ? IN_ : d.in_ch;
  const std::size_t out = OUT_ ? OUT_ : d.out_ch;
  const auto rows = static_cast<std::ptrdiff_t>(d.batch * d.height);
  const bool par = d.output_size() * k1 * k2 * in >= kMinParallelWork;
  const std::ptrdiff_t ro = d.row_offset(), co = d.col_offset();

#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::ptrdiff_t s = row / H;
    const std::ptrdiff_t u = row % H;
    T* __restrict yr = y + row * W * static_cast<std::ptrdiff_t>(out);
    for (std::ptrdiff_t v = 0; v < W; ++v)
      for (std::size_t j = 0; j < out; ++j) yr[static_cast<std::size_t>(v) * out + j] = b[j];
    std::size_t m_lo, m_hi;
    valid_taps(u, ro, H, k1, m_lo, m_hi);
    for (std::size_t m = m_lo; m < m_hi; ++m) {
      const T* __restrict xr = x + (s * H + u - static_cast<std::ptrdiff_t>(m) + ro) * W * static_cast<std::ptrdiff_t>(in);
      for (std::size_t n = 0; n < k2; ++n) {
        // columns v with 0 <= v - n + co < W
        const std::ptrdiff_t shift = co - static_cast<std::ptrdiff_t>(n);
        const std::ptrdiff_t v_lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t v_hi = std::min<std::ptrdiff_t>(W, W - shift);
        const T* __restrict wp = w + (m * k2 + n) * in * out;
        for (std::ptrdiff_t v = v_lo; v < v_hi; ++v) {
          const T* xp = xr + (v + shift) * static_cast<std::ptrdiff_t>(in);
          T* yp = yr + v * static_cast<std::ptrdiff_t>(out);
          for (std::size_t i = 0; i < in; ++i)
            for (std::size_t j = 0; j < out; ++j) yp[j] += xp[i] * wp[i * out + j];
        }
      }
    }
  }
}

template <class T, std::size_t K1_, std::size_t K2_, std::size_t IN_, std::size_t OUT_>
void conv_backward_impl(const ConvDims& d, const T* __restrict x, const T* __restrict w, const T* __restrict dy,
                        T* __restrict dx, T* dw, T* db) {
  const auto H = static_cast<std::ptrdiff_t>(d.height);
  const auto W = static_cast<std::ptrdiff_t>(d.width);
  const std::size_t k1 = K1_ ? K1_ : d.k1;
  const std::size_t k2 = K2_ ? K2_ : d.k2;
  const std::size_t in = IN_ ? IN_ : d.in_ch;
  const std::size_t out = OUT_ ? OUT_ : d.out_ch;
  const auto rows = static_cast<std::ptrdiff_t>(d.batch * d.height);
  const bool par = d.output_size() * k1 * k2 * in >= kMinParallelWork;
  const std::ptrdiff_t ro = d.row_offset(), co = d.col_offset();
  const std::ptrdiff_t sin = static_cast<std::ptrdiff_t>(in), sout = static_cast<std::ptrdiff_t>(out);

  // dx(r,c,i) = sum_{m,n,j} dy(r + m - ro, c + n - co, j) w(m,n,i,j)
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::ptrdiff_t s = row / H;
    const std::ptrdiff_t r = row % H;
    T* __restrict dxr = dx + row * W * sin;
    for (std::ptrdiff_t i = 0; i < W * sin; ++i) dxr[i] = 0;
    // taps with 0 <= r + m - ro < H
    const std::ptrdiff_t m_lo = std::max<std::ptrdiff_t>(0, ro - r);
    const std::ptrdiff_t m_hi = std::max(m_lo, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(k1), H - r + ro));
    for (std::ptrdiff_t m = m_lo; m < m_hi; ++m) {
      const T* __restrict dyr = dy + (s * H + r + m - ro) * W * sout;
      for (std::size_t n = 0; n < k2; ++n) {
        // columns c with 0 <= c + n - co < W
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(n) - co;
        const std::ptrdiff_t c_lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t c_hi = std::min<std::ptrdiff_t>(W, W - shift);
        const T* __restrict wp = w + (static_cast<std::size_t>(m) * k2 + n) * in * out;
        for (std::ptrdiff_t c = c_lo; c < c_hi; ++c) {
          const T* dyp = dyr + (c + shift) * sout;
          T* dxp = dxr + c * sin;
          for (std::size_t i = 0; i < in; ++i) {
            T t = 0;
            for (std::size_t j = 0; j < out; ++j) t += dyp[j] * wp[i * out + j];
            dxp[i] += t;
          }
        }
      }
    }
  }

  // Weight and bias gradients: one partial per sample, merged in sample order.
  const std::size_t wsz = d.weight_size();
  const std::size_t stride = wsz + out;
  std::vector<double> partial(d.batch * stride, 0.0);
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);

#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t s = 0; s < batch; ++s) {
    double* __restrict pw = partial.data() + static_cast<std::size_t>(s) * stride;
    double* __restrict pb = pw + wsz;
    const T* dys = dy + s * H * W * sout;
    for (std::ptrdiff_t k = 0; k < H * W; ++k)
      for (std::size_t j = 0; j < out; ++j) pb[j] += dys[k * sout + static_cast<std::ptrdiff_t>(j)];
    for (std::size_t m = 0; m < k1; ++m)
      for (std::size_t n = 0; n < k2; ++n) {
        double* __restrict pwq = pw + (m * k2 + n) * in * out;
        const std::ptrdiff_t rshift = ro - static_cast<std::ptrdiff_t>(m);
        const std::ptrdiff_t cshift = co - static_cast<std::ptrdiff_t>(n);
        const std::ptrdiff_t u_lo = std::max<std::ptrdiff_t>(0, -rshift), u_hi = std::min<std::ptrdiff_t>(H, H - rshift);
        const std::ptrdiff_t v_lo = std::max<std::ptrdiff_t>(0, -cshift), v_hi = std::min<std::ptrdiff_t>(W, W - cshift);
        for (std::ptrdiff_t u = u_lo; u < u_hi; ++u) {
          const T* dyr = dys + u * W * sout;
          const T* xr = x + (s * H + u + rshift) * W * sin;
          if constexpr (IN_ != 0 && OUT_ != 0) {
            double acc[IN_ * OUT_] = {};
            for (std::ptrdiff_t v = v_lo; v < v_hi; ++v) {
              const T* xp = xr + (v + cshift) * sin;
              const T* dyp = dyr + v * sout;
              for (std::size_t i = 0; i < IN_; ++i)
                for (std::size_t j = 0; j < OUT_; ++j)
                  acc[i * OUT_ + j] += static_cast<double>(xp[i]) * static_cast<double>(dyp[j]);
            }
            for (std::size_t q = 0; q < IN_ * OUT_; ++q) pwq[q] += acc[q];
          } else {
            for (std::ptrdiff_t v = v_lo; v < v_hi; ++v) {
              const T* xp = xr + (v + cshift) * sin;
              const T* dyp = dyr + v * sout;
              for (std::size_t i = 0; i < in; ++i)
                for (std::size_t j = 0; j < out; ++j)
                  pwq[i * out + j] += static_cast<double>(xp[i]) * static_cast<double>(dyp[j]);
            }
          }
        }
      }
  }

  std::vector<double> total(stride, 0.0);
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::size_t k = 0; k < stride; ++k) total[k] += partial[s * stride + k];
  for (std::size_t k = 0; k < wsz; ++k) dw[k] = static_cast<T>(total[k]);
  for (std::size_t j = 0; j < out; ++j) db[j] = static_cast<T>(total[wsz + j]);
}

// Calls f with integral_constant<K1, K2, IN, OUT> for the layer shapes of
// the network, falling back to all zeros (runtime geometry).
template <std::size_t... V>
struct Geometry {};

template <class F>
void dispatch_geometry(const ConvDims& d, F&& f) {
  const std::array<std::size_t, 4> g{d.k1, d.k2, d.in_ch, d.out_ch};
  using A = std::array<std::size_t, 4>;
  if (g == A{3, 3, 1, 2}) return f(Geometry<3, 3, 1, 2>{});
  if (g == A{2, 2, 2, 4}) return f(Geometry<2, 2, 2, 4>{});
  if (g == A{4, 4, 4, 4}) return f(Geometry<4, 4, 4, 4>{});
  if (g == A{1, 1, 20, 2}) return f(Geometry<1, 1, 20, 2>{});
  if (g == A{3, 3, 2, 4}) return f(Geometry<3, 3, 2, 4>{});
  return f(Geometry<0, 0, 0, 0>{});
}

}  // namespace

template <class T>
void conv_forward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                  std::span<const T> b, std::span<T> y) {
  dispatch_geometry(d, [&]<std::size_t... V>(Geometry<V...>) {
    conv_forward_impl<T, V...>(d, x.data(), w.data(), b.data(), y.data());
  });
}

template <class T>
void conv_backward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                   std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  dispatch_geometry(d, [&]<std::size_t... V>(Geometry<V...>) {
    conv_backward_impl<T, V...>(d, x.data(), w.data(), dy.data(), dx.data(), dw.data(), db.data());
  });
}

namespace {

template <class F>
void pool_sample_windows(const PoolDims& d, std::size_t, F&& f) {
  const auto H = static_cast<std::ptrdiff_t>(d.height);
  const auto W = static_cast<std::ptrdiff_t>(d.width);
  for (std::size_t oy = 0; oy < d.out_height(); ++oy) {
    const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(oy * PoolDims::stride) - d.pad_top();
    const std::ptrdiff_t r_lo = std::max<std::ptrdiff_t>(r0, 0);
    const std::ptrdiff_t r_hi = std::min<std::ptrdiff_t>(r0 + PoolDims::window, H);
    for (std::size_t ox = 0; ox < d.out_width(); ++ox) {
      const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(ox * PoolDims::stride) - d.pad_left();
      const std::ptrdiff_t c_lo = std::max<std::ptrdiff_t>(c0, 0);
      const std::ptrdiff_t c_hi = std::min<std::ptrdiff_t>(c0 + PoolDims::window, W);
      f(oy, ox, r_lo, r_hi, c_lo, c_hi);
    }
  }
}

}  // namespace

template <class T>
void avgpool_forward(const PoolDims& d, std::span<const T> x, std::span<T> y) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  const bool par = d.input_size() >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t si = 0; si < batch; ++si) {
    const auto s = static_cast<std::size_t>(si);
    pool_sample_windows(d, s, [&](std::size_t oy, std::size_t ox, std::ptrdiff_t r_lo,
                                  std::ptrdiff_t r_hi, std::ptrdiff_t c_lo, std::ptrdiff_t c_hi) {
      const T count = static_cast<T>((r_hi - r_lo) * (c_hi - c_lo));
      T* yp = y.data() + ((s * d.out_height() + oy) * d.out_width() + ox) * d.channels;
      for (std::size_t ch = 0; ch < d.channels; ++ch) {
        T acc = 0;
        for (auto r = r_lo; r < r_hi; ++r)
          for (auto c = c_lo; c < c_hi; ++c)
            acc += x[((s * d.height + r) * d.width + c) * d.channels + ch];
        yp[ch] = acc / count;
      }
    });
  }
}

template <class T>
void avgpool_backward(const PoolDims& d, std::span<const T> dy, std::span<T> dx) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  const std::size_t per_sample = d.height * d.width * d.channels;
  const bool par = d.input_size() >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t si = 0; si < batch; ++si) {
    const auto s = static_cast<std::size_t>(si);
    std::fill_n(dx.data() + s * per_sample, per_sample, T{0});
    pool_sample_windows(d, s, [&](std::size_t oy, std::size_t ox, std::ptrdiff_t r_lo,
                                  std::ptrdiff_t r_hi, std::ptrdiff_t c_lo, std::ptrdiff_t c_hi) {
      const T count = static_cast<T>((r_hi - r_lo) * (c_hi - c_lo));
      const T* dyp = dy.data() + ((s * d.out_height() + oy) * d.out_width() + ox) * d.channels;
      for (std::size_t ch = 0; ch < d.channels; ++ch) {
        const T g = dyp[ch] / count;
        for (auto r = r_lo; r < r_hi; ++r)
          for (auto c = c_lo; c < c_hi; ++c)
            dx[((s * d.height + r) * d.width + c) * d.channels + ch] += g;
      }
    });
  }
}

template <class T>
void maxpool_forward(const PoolDims& d, std::span<const T> x, std::span<T> y,
                     std::span<std::uint32_t> argmax) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  const bool par = d.input_size() >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t si = 0; si < batch; ++si) {
    const auto s = static_cast<std::size_t>(si);
    pool_sample_windows(d, s, [&](std::size_t oy, std::size_t ox, std::ptrdiff_t r_lo,
                                  std::ptrdiff_t r_hi, std::ptrdiff_t c_lo, std::ptrdiff_t c_hi) {
      const std::size_t o0 = ((s * d.out_height() + oy) * d.out_width() + ox) * d.channels;
      for (std::size_t ch = 0; ch < d.channels; ++ch) {
        std::size_t best_idx = ((s * d.height + r_lo) * d.width + c_lo) * d.channels + ch;
        T best = x[best_idx];
        for (auto r = r_lo; r < r_hi; ++r)
          for (auto c = c_lo; c < c_hi; ++c) {
            const std::size_t idx = ((s * d.height + r) * d.width + c) * d.channels + ch;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        y[o0 + ch] = best;
        argmax[o0 + ch] = static_cast<std::uint32_t>(best_idx);
      }
    });
  }
}

template <class T>
void maxpool_backward(const PoolDims& d, std::span<const T> dy,
                      std::span<const std::uint32_t> argmax, std::span<T> dx) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  const std::size_t in_per = d.height * d.width * d.channels;
  const std::size_t out_per = d.out_height() * d.out_width() * d.channels;
  const bool par = d.input_size() >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t si = 0; si < batch; ++si) {
    const auto s = static_cast<std::size_t>(si);
    std::fill_n(dx.data() + s * in_per, in_per, T{0});
    for (std::size_t o = s * out_per; o < (s + 1) * out_per; ++o) dx[argmax[o]] += dy[o];
  }
}

template <class T>
void dense_forward(const DenseDims& d, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> y) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  const bool par = d.batch * d.in * d.out >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t si = 0; si < batch; ++si) {
    const auto s = static_cast<std::size_t>(si);
    T* yp = y.data() + s * d.out;
    for (std::size_t n = 0; n < d.out; ++n) yp[n] = b[n];
    for (std::size_t m = 0; m < d.in; ++m) {
      const T xv = x[s * d.in + m];
      const T* wp = w.data() + m * d.out;
      for (std::size_t n = 0; n < d.out; ++n) yp[n] += xv * wp[n];
    }
  }
}

template <class T>
void dense_backward(const DenseDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  const auto in = static_cast<std::ptrdiff_t>(d.in);
  const bool par = d.batch * d.in * d.out >= kMinParallelWork;
#pragma omp parallel if (par)
  {
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t si = 0; si < batch; ++si) {
      const auto s = static_cast<std::size_t>(si);
      const T* dyp = dy.data() + s * d.out;
      for (std::size_t m = 0; m < d.in; ++m) {
        const T* wp = w.data() + m * d.out;
        // Eight interleaved partial sums, combined pairwise: a fixed order
        // the compiler can keep in vector registers.
        T lane[8] = {};
        std::size_t n = 0;
        for (; n + 8 <= d.out; n += 8)
          for (std::size_t k = 0; k < 8; ++k) lane[k] += dyp[n + k] * wp[n + k];
        for (std::size_t k = 0; n < d.out; ++n, ++k) lane[k] += dyp[n] * wp[n];
        dx[s * d.in + m] = ((lane[0] + lane[4]) + (lane[2] + lane[6])) + ((lane[1] + lane[5]) + (lane[3] + lane[7]));
      }
    }
#pragma omp for schedule(static)
    for (std::ptrdiff_t mi = 0; mi < in; ++mi) {
      const auto m = static_cast<std::size_t>(mi);
      T* dwp = dw.data() + m * d.out;
      for (std::size_t n = 0; n < d.out; ++n) dwp[n] = 0;
      for (std::size_t s = 0; s < d.batch; ++s) {
        const T xv = x[s * d.in + m];
        const T* dyp = dy.data() + s * d.out;
        for (std::size_t n = 0; n < d.out; ++n) dwp[n] += xv * dyp[n];
      }
    }
  }
  for (std::size_t n = 0; n < d.out; ++n) db[n] = 0;
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::size_t n = 0; n < d.out; ++n) db[n] += dy[s * d.out + n];
}

namespace {

// Sums f(row, channel) over rows into out[channel] with chunked partials.
template <class F>
void chunked_channel_sum(std::size_t rows, std::size_t channels, std::span<double> out, F&& f) {
  const std::size_t chunks = (rows + kReduceChunk - 1) / kReduceChunk;
  std::vector<double> partial(chunks * channels, 0.0);
  const auto nchunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(static) if (rows * channels >= kMinParallelWork)
  for (std::ptrdiff_t ki = 0; ki < nchunks; ++ki) {
    const auto k = static_cast<std::size_t>(ki);
    double* p = partial.data() + k * channels;
    const std::size_t end = std::min(rows, (k + 1) * kReduceChunk);
    for (std::size_t r = k * kReduceChunk; r < end; ++r)
      for (std::size_t c = 0; c < channels; ++c) p[c] += f(r, c);
  }
  for (std::size_t c = 0; c < channels; ++c) out[c] = 0;
  for (std::size_t k = 0; k < chunks; ++k)
    for (std::size_t c = 0; c < channels; ++c) out[c] += partial[k * channels + c];
}

}  // namespace

template <class T>
void channel_moments(std::size_t rows, std::size_t channels, std::span<const T> x,
                     std::span<double> mean, std::span<double> var) {
  chunked_channel_sum(rows, channels, mean,
                      [&](std::size_t r, std::size_t c) { return double(x[r * channels + c]); });
  for (std::size_t c = 0; c < channels; ++c) mean[c] /= static_cast<double>(rows);
  chunked_channel_sum(rows, channels, var, [&](std::size_t r, std::size_t c) {
    const double dlt = x[r * channels + c] - mean[c];
    return dlt * dlt;
  });
  for (std::size_t c = 0; c < channels; ++c) var[c] /= static_cast<double>(rows);
}

template <class T>
void channel_grad_sums(std::size_t rows, std::size_t channels, std::span<const T> dy,
                       std::span<const T> xhat, std::span<double> sum_dy,
                       std::span<double> sum_dy_xhat) {
  chunked_channel_sum(rows, channels, sum_dy,
                      [&](std::size_t r, std::size_t c) { return double(dy[r * channels + c]); });
  chunked_channel_sum(rows, channels, sum_dy_xhat, [&](std::size_t r, std::size_t c) {
    return double(dy[r * channels + c]) * xhat[r * channels + c];
  });
}

JCNN_INSTANTIATE(float)
JCNN_INSTANTIATE(double)

}  // namespace jcnn::kernels::omp
