// Reference kernels: direct transcriptions of the layer formulas, one output
// element at a time. Slow on purpose; the OpenMP path is checked against them.

#include "jcnn/kernels.hpp"

#include <limits>

#include "kernel_instantiations.hpp"

namespace jcnn::kernels::serial {

template <class T>
void conv_forward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                  std::span<const T> b, std::span<T> y) {
  const auto H = static_cast<std::ptrdiff_t>(d.height);
  const auto W = static_cast<std::ptrdiff_t>(d.width);
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::ptrdiff_t u = 0; u < H; ++u)
      for (std::ptrdiff_t v = 0; v < W; ++v)
        for (std::size_t j = 0; j < d.out_ch; ++j) {
          T acc = b[j];
          for (std::size_t i = 0; i < d.in_ch; ++i)
            for (std::size_t m = 0; m < d.k1; ++m)
              for (std::size_t n = 0; n < d.k2; ++n) {
                const std::ptrdiff_t r = u - static_cast<std::ptrdiff_t>(m) + d.row_offset();
                const std::ptrdiff_t c = v - static_cast<std::ptrdiff_t>(n) + d.col_offset();
                if (r < 0 || r >= H || c < 0 || c >= W) continue;
                acc += x[((s * d.height + r) * d.width + c) * d.in_ch + i] *
                       w[((m * d.k2 + n) * d.in_ch + i) * d.out_ch + j];
              }
          y[((s * d.height + u) * d.width + v) * d.out_ch + j] = acc;
        }
}

template <class T>
void conv_backward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                   std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const auto H = static_cast<std::ptrdiff_t>(d.height);
  const auto W = static_cast<std::ptrdiff_t>(d.width);
  auto xi = [&](std::size_t s, std::ptrdiff_t r, std::ptrdiff_t c, std::size_t i) {
    return ((s * d.height + r) * d.width + c) * d.in_ch + i;
  };
  auto yi = [&](std::size_t s, std::ptrdiff_t u, std::ptrdiff_t v, std::size_t j) {
    return ((s * d.height + u) * d.width + v) * d.out_ch + j;
  };

  for (std::size_t j = 0; j < d.out_ch; ++j) {
    double acc = 0;
    for (std::size_t s = 0; s < d.batch; ++s)
      for (std::ptrdiff_t u = 0; u < H; ++u)
        for (std::ptrdiff_t v = 0; v < W; ++v) acc += dy[yi(s, u, v, j)];
    db[j] = static_cast<T>(acc);
  }

  for (std::size_t m = 0; m < d.k1; ++m)
    for (std::size_t n = 0; n < d.k2; ++n)
      for (std::size_t i = 0; i < d.in_ch; ++i)
        for (std::size_t j = 0; j < d.out_ch; ++j) {
          double acc = 0;
          for (std::size_t s = 0; s < d.batch; ++s)
            for (std::ptrdiff_t u = 0; u < H; ++u)
              for (std::ptrdiff_t v = 0; v < W; ++v) {
                const std::ptrdiff_t r = u - static_cast<std::ptrdiff_t>(m) + d.row_offset();
                const std::ptrdiff_t c = v - static_cast<std::ptrdiff_t>(n) + d.col_offset();
                if (r < 0 || r >= H || c < 0 || c >= W) continue;
                acc += static_cast<double>(dy[yi(s, u, v, j)]) * x[xi(s, r, c, i)];
              }
          dw[((m * d.k2 + n) * d.in_ch + i) * d.out_ch + j] = static_cast<T>(acc);
        }

  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::ptrdiff_t r = 0; r < H; ++r)
      for (std::ptrdiff_t c = 0; c < W; ++c)
        for (std::size_t i = 0; i < d.in_ch; ++i) {
          T acc = 0;
          for (std::size_t m = 0; m < d.k1; ++m)
            for (std::size_t n = 0; n < d.k2; ++n) {
              const std::ptrdiff_t u = r + static_cast<std::ptrdiff_t>(m) - d.row_offset();
              const std::ptrdiff_t v = c + static_cast<std::ptrdiff_t>(n) - d.col_offset();
              if (u < 0 || u >= H || v < 0 || v >= W) continue;
              for (std::size_t j = 0; j < d.out_ch; ++j)
                acc += dy[yi(s, u, v, j)] * w[((m * d.k2 + n) * d.in_ch + i) * d.out_ch + j];
            }
          dx[xi(s, r, c, i)] = acc;
        }
}

namespace {

template <class F>
void for_each_pool_window(const PoolDims& d, F&& f) {
  const auto H = static_cast<std::ptrdiff_t>(d.height);
  const auto W = static_cast<std::ptrdiff_t>(d.width);
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::size_t oy = 0; oy < d.out_height(); ++oy)
      for (std::size_t ox = 0; ox < d.out_width(); ++ox) {
        const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(oy * PoolDims::stride) - d.pad_top();
        const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(ox * PoolDims::stride) - d.pad_left();
        const std::ptrdiff_t r_lo = std::max<std::ptrdiff_t>(r0, 0);
        const std::ptrdiff_t r_hi = std::min<std::ptrdiff_t>(r0 + PoolDims::window, H);
        const std::ptrdiff_t c_lo = std::max<std::ptrdiff_t>(c0, 0);
        const std::ptrdiff_t c_hi = std::min<std::ptrdiff_t>(c0 + PoolDims::window, W);
        f(s, oy, ox, r_lo, r_hi, c_lo, c_hi);
      }
}

}  // namespace

template <class T>
void avgpool_forward(const PoolDims& d, std::span<const T> x, std::span<T> y) {
  for_each_pool_window(d, [&](std::size_t s, std::size_t oy, std::size_t ox, std::ptrdiff_t r_lo,
                              std::ptrdiff_t r_hi, std::ptrdiff_t c_lo, std::ptrdiff_t c_hi) {
    const T count = static_cast<T>((r_hi - r_lo) * (c_hi - c_lo));
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      T acc = 0;
      for (auto r = r_lo; r < r_hi; ++r)
        for (auto c = c_lo; c < c_hi; ++c) acc += x[((s * d.height + r) * d.width + c) * d.channels + ch];
      y[((s * d.out_height() + oy) * d.out_width() + ox) * d.channels + ch] = acc / count;
    }
  });
}

template <class T>
void avgpool_backward(const PoolDims& d, std::span<const T> dy, std::span<T> dx) {
  std::fill(dx.begin(), dx.end(), T{0});
  for_each_pool_window(d, [&](std::size_t s, std::size_t oy, std::size_t ox, std::ptrdiff_t r_lo,
                              std::ptrdiff_t r_hi, std::ptrdiff_t c_lo, std::ptrdiff_t c_hi) {
    const T count = static_cast<T>((r_hi - r_lo) * (c_hi - c_lo));
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      const T g = dy[((s * d.out_height() + oy) * d.out_width() + ox) * d.channels + ch] / count;
      for (auto r = r_lo; r < r_hi; ++r)
        for (auto c = c_lo; c < c_hi; ++c) dx[((s * d.height + r) * d.width + c) * d.channels + ch] += g;
    }
  });
}

template <class T>
void maxpool_forward(const PoolDims& d, std::span<const T> x, std::span<T> y,
                     std::span<std::uint32_t> argmax) {
  for_each_pool_window(d, [&](std::size_t s, std::size_t oy, std::size_t ox, std::ptrdiff_t r_lo,
                              std::ptrdiff_t r_hi, std::ptrdiff_t c_lo, std::ptrdiff_t c_hi) {
    for (std::size_t ch = 0; ch < d.channels; ++ch) {
      T best = -std::numeric_limits<T>::infinity();
      std::size_t best_idx = 0;
      bool first = true;
      for (auto r = r_lo; r < r_hi; ++r)
        for (auto c = c_lo; c < c_hi; ++c) {
          const std::size_t idx = ((s * d.height + r) * d.width + c) * d.channels + ch;
          if (first || x[idx] > best) {
            best = x[idx];
            best_idx = idx;
            first = false;
          }
        }
      const std::size_t o = ((s * d.out_height() + oy) * d.out_width() + ox) * d.channels + ch;
      y[o] = best;
      argmax[o] = static_cast<std::uint32_t>(best_idx);
    }
  });
}

template <class T>
void maxpool_backward(const PoolDims& d, std::span<const T> dy,
                      std::span<const std::uint32_t> argmax, std::span<T> dx) {
  std::fill(dx.begin(), dx.end(), T{0});
  for (std::size_t o = 0; o < d.output_size(); ++o) dx[argmax[o]] += dy[o];
}

template <class T>
void dense_forward(const DenseDims& d, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> y) {
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::size_t n = 0; n < d.out; ++n) {
      T acc = b[n];
      for (std::size_t m = 0; m < d.in; ++m) acc += x[s * d.in + m] * w[m * d.out + n];
      y[s * d.out + n] = acc;
    }
}

template <class T>
void dense_backward(const DenseDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::size_t m = 0; m < d.in; ++m) {
      T acc = 0;
      for (std::size_t n = 0; n < d.out; ++n) acc += dy[s * d.out + n] * w[m * d.out + n];
      dx[s * d.in + m] = acc;
    }
  for (std::size_t m = 0; m < d.in; ++m)
    for (std::size_t n = 0; n < d.out; ++n) {
      T acc = 0;
      for (std::size_t s = 0; s < d.batch; ++s) acc += x[s * d.in + m] * dy[s * d.out + n];
      dw[m * d.out + n] = acc;
    }
  for (std::size_t n = 0; n < d.out; ++n) {
    T acc = 0;
    for (std::size_t s = 0; s < d.batch; ++s) acc += dy[s * d.out + n];
    db[n] = acc;
  }
}

template <class T>
void channel_moments(std::size_t rows, std::size_t channels, std::span<const T> x,
                     std::span<double> mean, std::span<double> var) {
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0;
    for (std::size_t r = 0; r < rows; ++r) sum += x[r * channels + c];
    const double mu = sum / static_cast<double>(rows);
    double sq = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double dlt = x[r * channels + c] - mu;
      sq += dlt * dlt;
    }
    mean[c] = mu;
    var[c] = sq / static_cast<double>(rows);
  }
}

template <class T>
void channel_grad_sums(std::size_t rows, std::size_t channels, std::span<const T> dy,
                       std::span<const T> xhat, std::span<double> sum_dy,
                       std::span<double> sum_dy_xhat) {
  for (std::size_t c = 0; c < channels; ++c) {
    double a = 0, b = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      a += dy[r * channels + c];
      b += static_cast<double>(dy[r * channels + c]) * xhat[r * channels + c];
    }
    sum_dy[c] = a;
    sum_dy_xhat[c] = b;
  }
}

JCNN_INSTANTIATE(float)
JCNN_INSTANTIATE(double)

}  // namespace jcnn::kernels::serial
