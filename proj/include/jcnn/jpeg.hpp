#pragma once

// Baseline sequential grayscale JPEG: floating-point DCT, fixed Annex K
// Huffman tables, one quantization table. The decoder can stop after entropy
// decoding and hand back the quantized coefficients untouched.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace jcnn::jpeg {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> samples;  // row-major

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), samples(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return samples[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return samples[y * width + x]; }

  /// Copy of the w x h rectangle with top-left corner (x0, y0).
  GrayImage crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// 64 quantization steps in natural (row-major) order, each in [1, 255].
struct QuantTable {
  std::array<std::uint16_t, 64> steps{};
  friend bool operator==(const QuantTable&, const QuantTable&) = default;
};

/// ITU-T T.81 Annex K Table K.1 (luminance).
const QuantTable& standard_luminance_table();

/// Base table scaled by 5000/qf (qf < 50) or 200 - 2 qf, rounded and
/// clamped to [1, 255].
QuantTable quant_table_for_qf(int qf);

/// Quantized DCT coefficients of every 8x8 block, natural order within a
/// block, blocks row-major.
struct CoeffImage {
  std::size_t width = 0;   // pixels
  std::size_t height = 0;
  std::size_t blocks_high = 0;
  std::size_t blocks_wide = 0;
  std::vector<std::int16_t> coeffs;
  QuantTable quant;

  CoeffImage() = default;
  CoeffImage(std::size_t w, std::size_t h, const QuantTable& q);

  std::size_t block_count() const { return blocks_high * blocks_wide; }
  std::span<std::int16_t, 64> block(std::size_t by, std::size_t bx) {
    return std::span<std::int16_t, 64>(coeffs.data() + (by * blocks_wide + bx) * 64, 64);
  }
  std::span<const std::int16_t, 64> block(std::size_t by, std::size_t bx) const {
    return std::span<const std::int16_t, 64>(coeffs.data() + (by * blocks_wide + bx) * 64, 64);
  }

  friend bool operator==(const CoeffImage&, const CoeffImage&) = default;
};

using JpegStream = std::vector<std::uint8_t>;

using Block = std::array<double, 64>;
using QuantBlock = std::array<int, 64>;

/// Level shift by -128, then orthonormal 2-D DCT-II.
Block fdct8x8(std::span<const std::uint8_t, 64> samples);
/// Inverse of fdct8x8 including the +128 level shift; not rounded or clamped.
Block idct8x8(std::span<const double, 64> coeffs);

/// Coefficient / step rounded half away from zero.
QuantBlock quantize(std::span<const double, 64> coeffs, const QuantTable& q);
Block dequantize(std::span<const int, 64> coeffs, const QuantTable& q);

/// The coefficients encode_gray entropy-codes for this image and table.
CoeffImage forward_quantize(const GrayImage& img, const QuantTable& q);

/// Entropy-codes coefficients into a complete JFIF stream.
JpegStream encode_coeffs(const CoeffImage& coeffs);

/// Dimensions must be multiples of 8.
JpegStream encode_gray(const GrayImage& img, int qf);

CoeffImage decode_to_coeffs(std::span<const std::uint8_t> stream);

/// Dequantize, inverse DCT, round half away from zero, clamp to [0, 255].
GrayImage coeffs_to_pixels(const CoeffImage& coeffs);
GrayImage decode_to_pixels(std::span<const std::uint8_t> stream);

/// decode_to_pixels followed by encode_gray at qf2.
JpegStream recompress(std::span<const std::uint8_t> stream, int qf2);

/// Binary P5 with maxval 255.
GrayImage parse_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> format_pgm(const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& img, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

double psnr(const GrayImage& a, const GrayImage& b);

}  // namespace jcnn::jpeg
