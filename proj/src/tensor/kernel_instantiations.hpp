#pragma once

// Explicit instantiation list shared by the serial and OpenMP kernel files.

#define JCNN_INSTANTIATE(T)                                                                     \
  template void conv_forward<T>(const ConvDims&, std::span<const T>, std::span<const T>,         \
                                std::span<const T>, std::span<T>);                               \
  template void conv_backward<T>(const ConvDims&, std::span<const T>, std::span<const T>,        \
                                 std::span<const T>, std::span<T>, std::span<T>, std::span<T>);  \
  template void avgpool_forward<T>(const PoolDims&, std::span<const T>, std::span<T>);           \
  template void avgpool_backward<T>(const PoolDims&, std::span<const T>, std::span<T>);          \
  template void maxpool_forward<T>(const PoolDims&, std::span<const T>, std::span<T>,            \
                                   std::span<std::uint32_t>);                                    \
  template void maxpool_backward<T>(const PoolDims&, std::span<const T>,                         \
                                    std::span<const std::uint32_t>, std::span<T>);               \
  template void dense_forward<T>(const DenseDims&, std::span<const T>, std::span<const T>,       \
                                 std::span<const T>, std::span<T>);                              \
  template void dense_backward<T>(const DenseDims&, std::span<const T>, std::span<const T>,      \
                                  std::span<const T>, std::span<T>, std::span<T>, std::span<T>); \
  template void channel_moments<T>(std::size_t, std::size_t, std::span<const T>,                 \
                                   std::span<double>, std::span<double>);                        \
  template void channel_grad_sums<T>(std::size_t, std::size_t, std::span<const T>,               \
                                     std::span<const T>, std::span<double>, std::span<double>);
