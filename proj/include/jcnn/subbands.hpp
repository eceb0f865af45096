#pragma once
#include <stdexcept>

// Network input: the first 20 zigzag AC sub-bands of a coefficient image laid
// out as an [x, y, 20] tensor, the per-branch slice, and the ABS layer.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jcnn/jpeg.hpp"
#include "jcnn/tensor.hpp"

namespace jcnn {

inline constexpr std::size_t kSubbands = 20;
inline constexpr std::size_t kBranchCount = kSubbands + 1;

enum class CoeffScaling : std::uint8_t {
  quantized = 0,    // values as entropy-coded
  dequantized = 1,  // multiplied by their quantization step
};

/// t(i, j, k-1) = coefficient at zigzag index k of block (i, j), k = 1..20.
template <class T>
Tensor<T> assemble_subbands(const jpeg::CoeffImage& c,
                            CoeffScaling scaling = CoeffScaling::quantized);

/// Branch input: depth slice k-1 as [x,y,1] for k <= 20, the whole tensor for
/// k = 21. Accepts [x,y,20] or a batch [B,x,y,20].
template <class T>
Tensor<T> slice_branch_input(const Tensor<T>& t, std::size_t k);

template <class T>
Tensor<T> abs_layer(const Tensor<T>& t);
/// sign(x) * upstream with sign(0) = 0.
template <class T>
Tensor<T> abs_backward(const Tensor<T>& x, const Tensor<T>& upstream);

/// Debug dump: u32 x, y, z, dtype (0 = real32, 1 = real64), then row-major
/// values; everything little-endian.
template <class T>
std::vector<std::uint8_t> encode_tensor_dump(const Tensor<T>& t);

struct TensorDump {
  DType dtype = DType::real32;
  Tensor<double> values;  // [x,y,z]
};

TensorDump decode_tensor_dump(std::span<const std::uint8_t> bytes);

}  // namespace jcnn
