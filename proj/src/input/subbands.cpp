#include "jcnn/subbands.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "jcnn/errors.hpp"
#include "jcnn/zigzag.hpp"

namespace jcnn {

template <class T>
Tensor<T> assemble_subbands(const jpeg::CoeffImage& c, CoeffScaling scaling) {
  if (c.block_count() == 0) throw ShapeError("assemble_subbands: empty coefficient image");
  if (c.coeffs.size() != c.block_count() * 64)
    throw ShapeError("assemble_subbands: coefficient array size mismatch");
  Tensor<T> t({c.blocks_high, c.blocks_wide, kSubbands});
  T* out = t.data().data();
  for (std::size_t b = 0; b < c.block_count(); ++b) {
    const std::int16_t* blk = c.coeffs.data() + b * 64;
    for (std::size_t k = 1; k <= kSubbands; ++k) {
      const int pos = kZigzagToNatural[k];
      double v = blk[pos];
      if (scaling == CoeffScaling::dequantized) v *= c.quant.steps[static_cast<std::size_t>(pos)];
      out[b * kSubbands + k - 1] = static_cast<T>(v);
    }
  }
  return t;
}

template <class T>
Tensor<T> slice_branch_input(const Tensor<T>& t, std::size_t k) {
  if (k < 1 || k > kBranchCount)
    throw std::out_of_range("branch index " + std::to_string(k) + " outside 1..21");
  if ((t.rank() != 3 && t.rank() != 4) || t.shape().back() != kSubbands)
    throw ShapeError("slice_branch_input: expected [x,y,20] or [B,x,y,20], got " + shape_str(t.shape()));
  if (k == kBranchCount) return t;
  Shape s = t.shape();
  s.back() = 1;
  Tensor<T> out(s);
  const std::size_t n = out.size();
  const T* in = t.data().data();
  T* o = out.data().data();
  for (std::size_t i = 0; i < n; ++i) o[i] = in[i * kSubbands + k - 1];
  return out;
}

template <class T>
Tensor<T> abs_layer(const Tensor<T>& t) {
  Tensor<T> out = t;
  for (auto& v : out.storage()) v = std::abs(v);
  return out;
}

template <class T>
Tensor<T> abs_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  if (!x.same_shape(upstream))
    throw ShapeError("abs_backward: shape " + shape_str(x.shape()) + " vs " + shape_str(upstream.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] > 0 ? upstream[i] : (x[i] < 0 ? -upstream[i] : T{0});
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
void put_le(std::vector<std::uint8_t>& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t pos, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
  return v;
}

}  // namespace

template <class T>
std::vector<std::uint8_t> encode_tensor_dump(const Tensor<T>& t) {
  require_rank(t.shape(), 3, "tensor dump");
  std::vector<std::uint8_t> out;
  out.reserve(16 + t.size() * sizeof(T));
  for (std::size_t i = 0; i < 3; ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
  put_u32(out, static_cast<std::uint32_t>(dtype_of<T>()));
  for (T v : t.data()) {
    if constexpr (std::is_same_v<T, float>)
      put_le(out, std::bit_cast<std::uint32_t>(v));
    else
      put_le(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorDump decode_tensor_dump(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("tensor dump: truncated header");
  const std::size_t x = get_le(bytes, 0, 4), y = get_le(bytes, 4, 4), z = get_le(bytes, 8, 4);
  const auto dt = get_le(bytes, 12, 4);
  if (dt > 1) throw FormatError("tensor dump: unknown dtype " + std::to_string(dt));
  if (x == 0 || y == 0 || z == 0) throw FormatError("tensor dump: zero extent");
  const std::size_t width = dt == 0 ? 4 : 8;
  const std::size_t n = x * y * z;
  if (bytes.size() != 16 + n * width) throw FormatError("tensor dump: payload size mismatch");
  TensorDump d{dt == 0 ? DType::real32 : DType::real64, Tensor<double>({x, y, z})};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = get_le(bytes, 16 + i * width, width);
    d.values[i] = dt == 0 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                          : std::bit_cast<double>(bits);
  }
  return d;
}

#define JCNN_SUBBAND_INSTANTIATE(T)                                                     \
  template Tensor<T> assemble_subbands<T>(const jpeg::CoeffImage&, CoeffScaling);       \
  template Tensor<T> slice_branch_input<T>(const Tensor<T>&, std::size_t);              \
  template Tensor<T> abs_layer<T>(const Tensor<T>&);                                    \
  template Tensor<T> abs_backward<T>(const Tensor<T>&, const Tensor<T>&);               \
  template std::vector<std::uint8_t> encode_tensor_dump<T>(const Tensor<T>&);

JCNN_SUBBAND_INSTANTIATE(float)
JCNN_SUBBAND_INSTANTIATE(double)

}  // namespace jcnn
