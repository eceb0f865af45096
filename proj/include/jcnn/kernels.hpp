#pragma once

// Inner loops of the layer primitives. Every kernel exists twice:
//   serial::  textbook loop nests, kept as the reference for parity tests
//             and the benchmark baseline;
//   omp::     OpenMP versions used by the layers. Reductions are split into
//             fixed chunks and merged in index order, so results do not
//             depend on the thread count.
// All tensors are row-major NHWC; weights are [K1,K2,D1,D2]; dense weights
// are [M,N].

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>

namespace jcnn::kernels {

struct ConvDims {
  std::size_t batch, height, width, in_ch, out_ch, k1, k2;

  /// Tap (m,n) of output (u,v) reads input (u - m + row_offset, v - n + col_offset).
  /// The offsets put the window where "SAME" padding does (extra padding at
  /// the bottom/right for even kernels).
  std::ptrdiff_t row_offset() const { return static_cast<std::ptrdiff_t>(k1 / 2); }
  std::ptrdiff_t col_offset() const { return static_cast<std::ptrdiff_t>(k2 / 2); }
  std::size_t input_size() const { return batch * height * width * in_ch; }
  std::size_t output_size() const { return batch * height * width * out_ch; }
  std::size_t weight_size() const { return k1 * k2 * in_ch * out_ch; }
};

/// 3x3 window, stride 2, SAME placement: out = ceil(in / 2) and the padding
/// needed to reach it is split with the smaller half before.
struct PoolDims {
  std::size_t batch, height, width, channels;

  static constexpr std::size_t window = 3;
  static constexpr std::size_t stride = 2;

  std::size_t out_height() const { return (height + stride - 1) / stride; }
  std::size_t out_width() const { return (width + stride - 1) / stride; }
  std::ptrdiff_t pad_top() const { return pad_before(height); }
  std::ptrdiff_t pad_left() const { return pad_before(width); }
  std::size_t input_size() const { return batch * height * width * channels; }
  std::size_t output_size() const { return batch * out_height() * out_width() * channels; }

 private:
  static std::ptrdiff_t pad_before(std::size_t in) {
    const std::ptrdiff_t out = static_cast<std::ptrdiff_t>((in + stride - 1) / stride);
    const std::ptrdiff_t total = std::max<std::ptrdiff_t>(
        (out - 1) * static_cast<std::ptrdiff_t>(stride) + static_cast<std::ptrdiff_t>(window) -
            static_cast<std::ptrdiff_t>(in),
        0);
    return total / 2;
  }
};

struct DenseDims {
  std::size_t batch, in, out;
};

#define JCNN_KERNEL_DECLS                                                                     \
  template <class T>                                                                          \
  void conv_forward(const ConvDims& d, std::span<const T> x, std::span<const T> w,             \
                    std::span<const T> b, std::span<T> y);                                      \
  template <class T>                                                                          \
  void conv_backward(const ConvDims& d, std::span<const T> x, std::span<const T> w,            \
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db); \
  template <class T>                                                                          \
  void avgpool_forward(const PoolDims& d, std::span<const T> x, std::span<T> y);               \
  template <class T>                                                                          \
  void avgpool_backward(const PoolDims& d, std::span<const T> dy, std::span<T> dx);            \
  template <class T>                                                                          \
  void maxpool_forward(const PoolDims& d, std::span<const T> x, std::span<T> y,                \
                       std::span<std::uint32_t> argmax);                                       \
  template <class T>                                                                          \
  void maxpool_backward(const PoolDims& d, std::span<const T> dy,                              \
                        std::span<const std::uint32_t> argmax, std::span<T> dx);               \
  template <class T>                                                                          \
  void dense_forward(const DenseDims& d, std::span<const T> x, std::span<const T> w,           \
                     std::span<const T> b, std::span<T> y);                                     \
  template <class T>                                                                          \
  void dense_backward(const DenseDims& d, std::span<const T> x, std::span<const T> w,          \
                      std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db); \
  /* Per-channel mean and biased variance over rows x channels data. */                      \
  template <class T>                                                                          \
  void channel_moments(std::size_t rows, std::size_t channels, std::span<const T> x,           \
                       std::span<double> mean, std::span<double> var);                         \
  /* Per-channel sums of dy and dy * xhat (BN backward reductions). */                       \
  template <class T>                                                                          \
  void channel_grad_sums(std::size_t rows, std::size_t channels, std::span<const T> dy,        \
                         std::span<const T> xhat, std::span<double> sum_dy,                    \
                         std::span<double> sum_dy_xhat);

namespace serial {
JCNN_KERNEL_DECLS
}  // namespace serial

namespace omp {
JCNN_KERNEL_DECLS
}  // namespace omp

#undef JCNN_KERNEL_DECLS

}  // namespace jcnn::kernels
