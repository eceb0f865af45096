#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace jcnn {

struct BlockPos {
  int row;
  int col;
  friend bool operator==(const BlockPos&, const BlockPos&) = default;
};

namespace detail {

// Walks the anti-diagonals of the 8x8 block, alternating direction.
constexpr std::array<int, 64> make_zigzag_to_natural() {
  std::array<int, 64> order{};
  int k = 0;
  for (int s = 0; s < 15; ++s) {
    if (s % 2 == 0) {
      for (int r = std::min(s, 7); r >= 0 && s - r < 8; --r) order[k++] = r * 8 + (s - r);
    } else {
      for (int c = std::min(s, 7); c >= 0 && s - c < 8; --c) order[k++] = (s - c) * 8 + c;
    }
  }
  return order;
}

}  // namespace detail

/// zigzag index -> natural (row-major) index within an 8x8 block.
inline constexpr std::array<int, 64> kZigzagToNatural = detail::make_zigzag_to_natural();

inline constexpr std::array<int, 64> kNaturalToZigzag = [] {
  std::array<int, 64> inv{};
  for (int k = 0; k < 64; ++k) inv[kZigzagToNatural[k]] = k;
  return inv;
}();

/// Position of zigzag index k (0 = DC) in the 8x8 block.
inline BlockPos zigzag_position(int k) {
  if (k < 0 || k > 63) throw std::out_of_range("zigzag index " + std::to_string(k) + " outside 0..63");
  const int nat = kZigzagToNatural[static_cast<std::size_t>(k)];
  return {nat / 8, nat % 8};
}

}  // namespace jcnn
