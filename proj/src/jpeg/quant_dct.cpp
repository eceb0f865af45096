#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "jcnn/errors.hpp"
#include "jcnn/jpeg.hpp"

namespace jcnn::jpeg {

const QuantTable& standard_luminance_table() {
  static const QuantTable table{{
      16, 11, 10, 16, 24,  40,  51,  61,   //
      12, 12, 14, 19, 26,  58,  60,  55,   //
      14, 13, 16, 24, 40,  57,  69,  56,   //
      14, 17, 22, 29, 51,  87,  80,  62,   //
      18, 22, 37, 56, 68,  109, 103, 77,   //
      24, 35, 55, 64, 81,  104, 113, 92,   //
      49, 64, 78, 87, 103, 121, 120, 101,  //
      72, 92, 95, 98, 112, 100, 103, 99,
  }};
  return table;
}

QuantTable quant_table_for_qf(int qf) {
  if (qf < 1 || qf > 100)
    throw std::invalid_argument("quality factor " + std::to_string(qf) + " outside 1..100");
  const long scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
  QuantTable q;
  const auto& base = standard_luminance_table();
  for (std::size_t i = 0; i < 64; ++i) {
    long step = (base.steps[i] * scale + 50) / 100;
    q.steps[i] = static_cast<std::uint16_t>(std::clamp(step, 1L, 255L));
  }
  return q;
}

namespace {

// basis[u][x] = c(u)/2 * cos((2x + 1) u pi / 16), c(0) = 1/sqrt(2), else 1.
// Rows are orthonormal, so the 2-D transform B X B^T preserves energy.
struct DctBasis {
  double m[8][8];
  DctBasis() {
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x) {
        const double cu = u == 0 ? 1.0 / std::numbers::sqrt2 : 1.0;
        m[u][x] = 0.5 * cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
  }
};

const DctBasis& basis() {
  static const DctBasis b;
  return b;
}

}  // namespace

Block fdct8x8(std::span<const std::uint8_t, 64> samples) {
  const auto& B = basis().m;
  double tmp[8][8];
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double acc = 0;
      for (int x = 0; x < 8; ++x) acc += B[u][x] * (static_cast<double>(samples[y * 8 + x]) - 128.0);
      tmp[y][u] = acc;
    }
  Block out{};
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double acc = 0;
      for (int y = 0; y < 8; ++y) acc += B[v][y] * tmp[y][u];
      out[v * 8 + u] = acc;
    }
  return out;
}

Block idct8x8(std::span<const double, 64> coeffs) {
  const auto& B = basis().m;
  double tmp[8][8];
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double acc = 0;
      for (int u = 0; u < 8; ++u) acc += B[u][x] * coeffs[v * 8 + u];
      tmp[v][x] = acc;
    }
  Block out{};
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0;
      for (int v = 0; v < 8; ++v) acc += B[v][y] * tmp[v][x];
      out[y * 8 + x] = acc + 128.0;
    }
  return out;
}

QuantBlock quantize(std::span<const double, 64> coeffs, const QuantTable& q) {
  QuantBlock out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const double v = std::round(coeffs[i] / q.steps[i]);
    out[i] = static_cast<int>(std::clamp(v, -1024.0, 1023.0));
  }
  return out;
}

Block dequantize(std::span<const int, 64> coeffs, const QuantTable& q) {
  Block out{};
  for (std::size_t i = 0; i < 64; ++i) out[i] = static_cast<double>(coeffs[i]) * q.steps[i];
  return out;
}

CoeffImage::CoeffImage(std::size_t w, std::size_t h, const QuantTable& q)
    : width(w), height(h), blocks_high((h + 7) / 8), blocks_wide((w + 7) / 8), quant(q) {
  coeffs.assign(blocks_high * blocks_wide * 64, 0);
}

GrayImage GrayImage::crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const {
  if (x0 + w > width || y0 + h > height) throw std::out_of_range("crop rectangle outside image");
  GrayImage out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>((y0 + y) * width + x0), w,
                out.samples.begin() + static_cast<std::ptrdiff_t>(y * w));
  return out;
}

CoeffImage forward_quantize(const GrayImage& img, const QuantTable& q) {
  if (img.width == 0 || img.height == 0 || img.width % 8 || img.height % 8)
    throw CodecError("image dimensions " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + " are not positive multiples of 8");
  for (auto s : q.steps)
    if (s < 1 || s > 255) throw CodecError("quantization step outside [1,255]");
  CoeffImage out(img.width, img.height, q);
  std::array<std::uint8_t, 64> px{};
  for (std::size_t by = 0; by < out.blocks_high; ++by)
    for (std::size_t bx = 0; bx < out.blocks_wide; ++bx) {
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) px[y * 8 + x] = img.at(bx * 8 + x, by * 8 + y);
      const auto coef = fdct8x8(px);
      const auto qb = quantize(coef, q);
      auto dst = out.block(by, bx);
      for (std::size_t i = 0; i < 64; ++i) dst[i] = static_cast<std::int16_t>(qb[i]);
    }
  return out;
}

GrayImage coeffs_to_pixels(const CoeffImage& c) {
  GrayImage img(c.width, c.height);
  std::array<int, 64> qb{};
  for (std::size_t by = 0; by < c.blocks_high; ++by)
    for (std::size_t bx = 0; bx < c.blocks_wide; ++bx) {
      const auto src = c.block(by, bx);
      for (std::size_t i = 0; i < 64; ++i) qb[i] = src[i];
      const auto deq = dequantize(qb, c.quant);
      const auto px = idct8x8(deq);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t ix = bx * 8 + x, iy = by * 8 + y;
          if (ix >= c.width || iy >= c.height) continue;
          img.at(ix, iy) = static_cast<std::uint8_t>(std::clamp(std::round(px[y * 8 + x]), 0.0, 255.0));
        }
    }
  return img;
}

double psnr(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument("psnr: size mismatch");
  double se = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double d = double(a.samples[i]) - double(b.samples[i]);
    se += d * d;
  }
  if (se == 0) return INFINITY;
  const double mse = se / static_cast<double>(a.samples.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace jcnn::jpeg
