#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "jcnn/errors.hpp"
#include "jcnn/jpeg.hpp"
#include "jcnn/zigzag.hpp"
#include "test_util.hpp"

using namespace jcnn;
using namespace jcnn::jpeg;
using jcnn::testing::textured_image;

namespace {

std::size_t find_marker(const JpegStream& s, std::uint8_t code) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (s[i] == 0xFF && s[i + 1] == code) return i;
  return s.size();
}

}  // namespace

TEST(QuantTable, Qf50IsAnnexKTableK1) {
  const std::array<std::uint16_t, 64> k1 = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                            14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                            18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                            49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  EXPECT_EQ(quant_table_for_qf(50).steps, k1);
  EXPECT_EQ(standard_luminance_table().steps, k1);
}

TEST(QuantTable, KnownScaledRows) {
  // first rows of the widely published IJG tables
  const auto q75 = quant_table_for_qf(75), q95 = quant_table_for_qf(95), q10 = quant_table_for_qf(10);
  EXPECT_EQ(std::vector<int>(q75.steps.begin(), q75.steps.begin() + 8), (std::vector<int>{8, 6, 5, 8, 12, 20, 26, 31}));
  EXPECT_EQ(std::vector<int>(q95.steps.begin(), q95.steps.begin() + 8), (std::vector<int>{2, 1, 1, 2, 2, 4, 5, 6}));
  EXPECT_EQ(q10.steps[0], 80);
  EXPECT_EQ(q10.steps[63], 255);  // 99 * 5 clamps
  EXPECT_TRUE(std::all_of(quant_table_for_qf(100).steps.begin(), quant_table_for_qf(100).steps.end(),
                          [](auto v) { return v == 1; }));
  EXPECT_THROW(quant_table_for_qf(0), std::invalid_argument);
  EXPECT_THROW(quant_table_for_qf(101), std::invalid_argument);
}

TEST(Zigzag, StandardOrder) {
  const int head[] = {0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5};
  for (int k = 0; k < 16; ++k) EXPECT_EQ(kZigzagToNatural[static_cast<std::size_t>(k)], head[k]) << k;
  EXPECT_EQ(kZigzagToNatural[63], 63);
  EXPECT_EQ(kZigzagToNatural[62], 62);
  EXPECT_EQ(zigzag_position(19), (BlockPos{4, 1}));
  EXPECT_EQ(zigzag_position(20), (BlockPos{5, 0}));
  for (int k = 0; k < 64; ++k) EXPECT_EQ(kNaturalToZigzag[static_cast<std::size_t>(kZigzagToNatural[k])], k);
  EXPECT_THROW(zigzag_position(64), std::out_of_range);
}

TEST(Dct, MatchesDirectFormula) {
  std::array<std::uint8_t, 64> px{};
  Rng rng(5);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng.below(256));
  const Block c = fdct8x8(px);
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
          s += (px[static_cast<std::size_t>(x * 8 + y)] - 128.0) * std::cos((2 * x + 1) * u * std::numbers::pi / 16) *
               std::cos((2 * y + 1) * v * std::numbers::pi / 16);
      const double cu = u ? 1 : 1 / std::numbers::sqrt2, cv = v ? 1 : 1 / std::numbers::sqrt2;
      EXPECT_NEAR(c[static_cast<std::size_t>(u * 8 + v)], 0.25 * cu * cv * s, 1e-9);
    }
  const Block back = idct8x8(c);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(back[i], px[i], 1e-9);
}

TEST(Quantize, RoundsHalfAwayFromZero) {
  QuantTable q;
  q.steps.fill(2);
  Block c{};
  c[0] = 5.0;   // 2.5 -> 3
  c[1] = -5.0;  // -2.5 -> -3
  c[2] = 4.9;   // 2.45 -> 2
  c[3] = -1.0;  // -0.5 -> -1
  const QuantBlock r = quantize(c, q);
  EXPECT_EQ(r[0], 3);
  EXPECT_EQ(r[1], -3);
  EXPECT_EQ(r[2], 2);
  EXPECT_EQ(r[3], -1);
  const Block d = dequantize(r, q);
  EXPECT_EQ(d[0], 6.0);
}

TEST(Codec, CoefficientRoundTripAllQf) {
  for (int qf = 60; qf <= 95; qf += 5) {
    const auto img = textured_image(64, 48, static_cast<std::uint64_t>(qf));
    const CoeffImage expect = forward_quantize(img, quant_table_for_qf(qf));
    const JpegStream s = encode_gray(img, qf);
    const CoeffImage got = decode_to_coeffs(s);
    EXPECT_EQ(got, expect) << "qf " << qf;
    EXPECT_EQ(got.quant, quant_table_for_qf(qf));
    EXPECT_EQ(got.width, 64u);
    EXPECT_EQ(got.blocks_wide, 8u);
  }
}

TEST(Codec, ExtremeCoefficients) {
  // checkerboard at QF 100 drives AC magnitudes to their largest values
  GrayImage img(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) img.at(x, y) = ((x + y) % 2) ? 255 : 0;
  const auto s = encode_gray(img, 100);
  EXPECT_EQ(decode_to_coeffs(s), forward_quantize(img, quant_table_for_qf(100)));
  GrayImage flat(8, 8, 0);
  EXPECT_EQ(decode_to_coeffs(encode_gray(flat, 100)), forward_quantize(flat, quant_table_for_qf(100)));
}

TEST(Codec, PixelDecodeMatchesInverseTransform) {
  const auto img = textured_image(32, 32, 3);
  const auto s = encode_gray(img, 90);
  const GrayImage dec = decode_to_pixels(s);
  const CoeffImage c = decode_to_coeffs(s);
  // oracle: dequantize + idct per block, round half away, clamp
  for (std::size_t by = 0; by < 4; ++by)
    for (std::size_t bx = 0; bx < 4; ++bx) {
      QuantBlock qb;
      const auto blk = c.block(by, bx);
      std::copy(blk.begin(), blk.end(), qb.begin());
      const Block px = idct8x8(dequantize(qb, c.quant));
      for (std::size_t i = 0; i < 64; ++i) {
        const double v = std::clamp(std::round(px[i]), 0.0, 255.0);
        EXPECT_EQ(dec.at(bx * 8 + i % 8, by * 8 + i / 8), static_cast<std::uint8_t>(v));
      }
    }
  EXPECT_GT(psnr(img, dec), 30.0);
}

TEST(Codec, RecompressCarriesFinalTable) {
  const auto img = textured_image(32, 32, 4);
  const auto d = recompress(encode_gray(img, 60), 95);
  EXPECT_EQ(decode_to_coeffs(d).quant, quant_table_for_qf(95));
  EXPECT_EQ(recompress(encode_gray(img, 95), 60), encode_gray(decode_to_pixels(encode_gray(img, 95)), 60));
}

TEST(Codec, EncoderIsDeterministicAndStuffsBytes) {
  const auto img = textured_image(64, 64, 8);
  const auto a = encode_gray(img, 95), b = encode_gray(img, 95);
  EXPECT_EQ(a, b);
  const std::size_t sos = find_marker(a, 0xDA);
  ASSERT_LT(sos, a.size());
  // every 0xFF in the entropy-coded data is followed by 0x00, except the EOI
  const std::size_t data = sos + 2 + ((a[sos + 2] << 8) | a[sos + 3]);
  for (std::size_t i = data; i + 2 < a.size(); ++i)
    if (a[i] == 0xFF) {
      EXPECT_EQ(a[i + 1], 0x00) << i;
    }
  EXPECT_EQ(a[a.size() - 2], 0xFF);
  EXPECT_EQ(a[a.size() - 1], 0xD9);
}

TEST(Codec, RejectsBadInputs) {
  EXPECT_ANY_THROW(encode_gray(GrayImage(12, 8), 75));
  EXPECT_ANY_THROW(encode_gray(GrayImage(8, 8), 0));

  const auto good = encode_gray(textured_image(16, 16, 1), 75);
  EXPECT_THROW(decode_to_coeffs(std::span(good).first(good.size() / 2)), CodecError);
  EXPECT_THROW(decode_to_coeffs(std::span(good).subspan(2)), CodecError);

  auto progressive = good;
  progressive[find_marker(progressive, 0xC0) + 1] = 0xC2;
  try {
    decode_to_coeffs(progressive);
    FAIL() << "progressive accepted";
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("rogressive"), std::string::npos) << e.what();
  }

  auto twelve_bit = good;
  twelve_bit[find_marker(twelve_bit, 0xC0) + 4] = 12;
  EXPECT_THROW(decode_to_coeffs(twelve_bit), CodecError);

  auto no_eoi = good;
  no_eoi.resize(no_eoi.size() - 2);
  EXPECT_THROW(decode_to_coeffs(no_eoi), CodecError);

  auto dqt16 = good;
  dqt16[find_marker(dqt16, 0xDB) + 4] = 0x10;
  EXPECT_THROW(decode_to_coeffs(dqt16), CodecError);

  EXPECT_THROW(decode_to_coeffs(std::vector<std::uint8_t>{}), CodecError);
}

TEST(Codec, SkipsAppAndCommentSegments) {
  const auto good = encode_gray(textured_image(16, 16, 2), 80);
  JpegStream s(good.begin(), good.begin() + 2);
  const std::uint8_t com[] = {0xFF, 0xFE, 0x00, 0x07, 'h', 'e', 'l', 'l', 'o'};
  s.insert(s.end(), std::begin(com), std::end(com));
  s.insert(s.end(), good.begin() + 2, good.end());
  EXPECT_EQ(decode_to_coeffs(s), decode_to_coeffs(good));
}

TEST(Pgm, ParsesHeaderWithComments) {
  const std::string text = "P5\n# a comment\n3 2\n# another\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  for (std::uint8_t v : {1, 2, 3, 4, 5, 250}) bytes.push_back(v);
  const GrayImage img = parse_pgm(bytes);
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.at(2, 1), 250);
  EXPECT_EQ(parse_pgm(format_pgm(img)), img);
}

TEST(Pgm, RejectsUnsupported) {
  auto bytes_of = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_ANY_THROW(parse_pgm(bytes_of("P2\n1 1\n255\n7\n")));
  EXPECT_ANY_THROW(parse_pgm(bytes_of("P5\n2 2\n65535\n")));
  EXPECT_ANY_THROW(parse_pgm(bytes_of("P5\n2 2\n255\nab")));
  EXPECT_ANY_THROW(parse_pgm(bytes_of("P5\n")));
}

TEST(Pgm, FileRoundTrip) {
  jcnn::testing::TempDir dir("pgm");
  const auto img = textured_image(24, 16, 9);
  write_pgm(img, dir / "sub/a.pgm");
  EXPECT_EQ(read_pgm(dir / "sub/a.pgm"), img);
  EXPECT_THROW(read_pgm(dir / "missing.pgm"), DataError);
}

TEST(Image, CropCopiesRectangle) {
  const auto img = textured_image(16, 16, 10);
  const auto c = img.crop(8, 4, 8, 8);
  EXPECT_EQ(c.at(0, 0), img.at(8, 4));
  EXPECT_EQ(c.at(7, 7), img.at(15, 11));
}
