#include <algorithm>
#include <cstdlib>
#include <string>

#include "huffman.hpp"
#include "jcnn/errors.hpp"
#include "jcnn/jpeg.hpp"
#include "jcnn/zigzag.hpp"

namespace jcnn::jpeg {

namespace {

using detail::HuffmanDecoder;
using detail::HuffmanEncoder;
using detail::HuffmanSpec;

constexpr std::uint8_t kSOI = 0xD8, kEOI = 0xD9, kSOS = 0xDA, kDQT = 0xDB, kDHT = 0xC4,
                       kDRI = 0xDD, kSOF0 = 0xC0, kAPP0 = 0xE0, kDAC = 0xCC, kDNL = 0xDC;

int magnitude_category(int v) {
  int a = std::abs(v), n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t bits, int count) {
    for (int i = count - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++nbits_ == 8) emit();
    }
  }

  // Pads the last byte with 1-bits.
  void flush() {
    while (nbits_ != 0) put(1, 1);
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    nbits_ = 0;
  }

  std::vector<std::uint8_t>& out_;
  std::uint8_t acc_ = 0;
  int nbits_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_marker(std::vector<std::uint8_t>& out, std::uint8_t code) {
  out.push_back(0xFF);
  out.push_back(code);
}

void put_dht(std::vector<std::uint8_t>& out, std::uint8_t class_id, const HuffmanSpec& spec) {
  put_marker(out, kDHT);
  put_u16(out, 2 + 1 + 16 + spec.symbols.size());
  out.push_back(class_id);
  out.insert(out.end(), spec.counts.begin(), spec.counts.end());
  out.insert(out.end(), spec.symbols.begin(), spec.symbols.end());
}

void encode_value(BitWriter& bw, int v, int category) {
  if (category == 0) return;
  const int bits = v < 0 ? v - 1 : v;
  bw.put(static_cast<std::uint32_t>(bits) & ((1u << category) - 1u), category);
}

}  // namespace

JpegStream encode_coeffs(const CoeffImage& c) {
  if (c.width == 0 || c.height == 0 || c.width > 65535 || c.height > 65535)
    throw CodecError("image dimensions outside the JPEG range");
  if (c.coeffs.size() != c.block_count() * 64) throw CodecError("coefficient array size mismatch");
  for (auto s : c.quant.steps)
    if (s < 1 || s > 255) throw CodecError("quantization step outside [1,255]");

  JpegStream out;
  out.reserve(c.block_count() * 48 + 700);
  put_marker(out, kSOI);

  put_marker(out, kAPP0);
  put_u16(out, 16);
  for (char ch : {'J', 'F', 'I', 'F', '\0'}) out.push_back(static_cast<std::uint8_t>(ch));
  out.insert(out.end(), {1, 1, 0, 0, 1, 0, 1, 0, 0});  // v1.01, aspect 1:1, no thumbnail

  put_marker(out, kDQT);
  put_u16(out, 67);
  out.push_back(0x00);  // 8-bit, table 0
  for (int k = 0; k < 64; ++k)
    out.push_back(static_cast<std::uint8_t>(c.quant.steps[static_cast<std::size_t>(kZigzagToNatural[k])]));

  put_marker(out, kSOF0);
  put_u16(out, 11);
  out.push_back(8);
  put_u16(out, c.height);
  put_u16(out, c.width);
  out.insert(out.end(), {1, 1, 0x11, 0});

  put_dht(out, 0x00, detail::luminance_dc_spec());
  put_dht(out, 0x10, detail::luminance_ac_spec());

  put_marker(out, kSOS);
  put_u16(out, 8);
  out.insert(out.end(), {1, 1, 0x00, 0, 63, 0});

  static const HuffmanEncoder dc(detail::luminance_dc_spec());
  static const HuffmanEncoder ac(detail::luminance_ac_spec());
  BitWriter bw(out);
  int pred = 0;
  for (std::size_t b = 0; b < c.block_count(); ++b) {
    const std::int16_t* blk = c.coeffs.data() + b * 64;
    const int diff = blk[0] - pred;
    pred = blk[0];
    const int dcat = magnitude_category(diff);
    if (dcat > 11) throw CodecError("DC difference out of baseline range");
    bw.put(dc.code[dcat], dc.length[dcat]);
    encode_value(bw, diff, dcat);

    int run = 0;
    for (int k = 1; k < 64; ++k) {
      const int v = blk[kZigzagToNatural[k]];
      if (v == 0) {
        ++run;
        continue;
      }
      while (run > 15) {
        bw.put(ac.code[0xF0], ac.length[0xF0]);
        run -= 16;
      }
      const int cat = magnitude_category(v);
      if (cat > 10) throw CodecError("AC coefficient out of baseline range");
      const int sym = (run << 4) | cat;
      bw.put(ac.code[sym], ac.length[sym]);
      encode_value(bw, v, cat);
      run = 0;
    }
    if (run > 0) bw.put(ac.code[0x00], ac.length[0x00]);
  }
  bw.flush();
  put_marker(out, kEOI);
  return out;
}

JpegStream encode_gray(const GrayImage& img, int qf) {
  return encode_coeffs(forward_quantize(img, quant_table_for_qf(qf)));
}

namespace {

const char* unsupported_frame(std::uint8_t marker) {
  switch (marker) {
    case 0xC1: return "extended sequential (SOF1)";
    case 0xC2: return "progressive (SOF2)";
    case 0xC3: return "lossless (SOF3)";
    case 0xC5: return "hierarchical sequential (SOF5)";
    case 0xC6: return "hierarchical progressive (SOF6)";
    case 0xC7: return "hierarchical lossless (SOF7)";
    case 0xC9: return "arithmetic-coded sequential (SOF9)";
    case 0xCA: return "arithmetic-coded progressive (SOF10)";
    case 0xCB: return "arithmetic-coded lossless (SOF11)";
    case 0xCD: return "arithmetic-coded hierarchical sequential (SOF13)";
    case 0xCE: return "arithmetic-coded hierarchical progressive (SOF14)";
    case 0xCF: return "arithmetic-coded hierarchical lossless (SOF15)";
    default: return nullptr;
  }
}

// Bit reader over one entropy-coded segment. Stops at any marker; asking
// for bits past a marker means the stream is truncated or corrupt.
class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

  int bit() {
    if (nbits_ == 0) fill();
    --nbits_;
    return (cur_ >> nbits_) & 1;
  }

  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }

  // Drops the partial byte, then consumes the expected RSTn marker.
  void restart(int expected) {
    nbits_ = 0;
    while (pos_ < data_.size() && data_[pos_] == 0xFF && pos_ + 1 < data_.size() &&
           data_[pos_ + 1] == 0xFF)
      ++pos_;
    if (pos_ + 1 >= data_.size() || data_[pos_] != 0xFF)
      throw CodecError("truncated stream: expected restart marker");
    const std::uint8_t m = data_[pos_ + 1];
    if (m != 0xD0 + (expected & 7))
      throw CodecError("restart marker out of sequence (found 0xFF" + hex(m) + ")");
    pos_ += 2;
  }

  // Position of the first byte after the entropy data (a marker's 0xFF).
  std::size_t end_position() {
    std::size_t p = pos_;
    while (p + 1 < data_.size() && !(data_[p] == 0xFF && data_[p + 1] != 0x00)) p += data_[p] == 0xFF ? 2 : 1;
    return p;
  }

  static std::string hex(std::uint8_t v) {
    const char* digits = "0123456789ABCDEF";
    return {digits[v >> 4], digits[v & 15]};
  }

 private:
  void fill() {
    if (pos_ >= data_.size()) throw CodecError("truncated stream: entropy-coded data ends early");
    const std::uint8_t b = data_[pos_];
    if (b == 0xFF) {
      if (pos_ + 1 >= data_.size()) throw CodecError("truncated stream: entropy-coded data ends early");
      if (data_[pos_ + 1] != 0x00)
        throw CodecError("truncated stream: marker 0xFF" + hex(data_[pos_ + 1]) +
                         " inside entropy-coded data");
      pos_ += 2;
    } else {
      ++pos_;
    }
    cur_ = b;
    nbits_ = 8;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
  std::uint8_t cur_ = 0;
  int nbits_ = 0;
};

int decode_symbol(BitReader& br, const HuffmanDecoder& t) {
  std::int32_t code = br.bit();
  for (int len = 1; len <= 16; ++len) {
    if (t.maxcode[len] >= 0 && code <= t.maxcode[len] && code >= t.mincode[len])
      return t.symbols[static_cast<std::size_t>(t.valptr[len] + code - t.mincode[len])];
    if (len < 16) code = (code << 1) | br.bit();
  }
  throw CodecError("invalid Huffman code in entropy-coded data");
}

int extend(int v, int category) {
  return category == 0 ? 0 : (v < (1 << (category - 1)) ? v - (1 << category) + 1 : v);
}

struct FrameInfo {
  std::size_t width = 0, height = 0;
  int quant_id = 0;
  int component_id = 0;
};

class Parser {
 public:
  explicit Parser(std::span<const std::uint8_t> s) : s_(s) {}

  CoeffImage run() {
    if (s_.size() < 4 || s_[0] != 0xFF || s_[1] != kSOI) throw CodecError("not a JPEG stream: missing SOI");
    pos_ = 2;
    bool have_frame = false;
    for (;;) {
      const std::uint8_t m = next_marker();
      if (m == kEOI) throw CodecError("no scan before EOI");
      if (const char* kind = unsupported_frame(m))
        throw CodecError(std::string("unsupported JPEG: ") + kind + " frame; only baseline SOF0 is accepted");
      if (m == kDAC) throw CodecError("unsupported JPEG: arithmetic coding (DAC marker)");
      const std::size_t len = segment_length();
      const std::size_t body = pos_ + 2, end = pos_ + len;
      switch (m) {
        case kDQT: parse_dqt(body, end); break;
        case kDHT: parse_dht(body, end); break;
        case kDRI:
          if (len != 4) throw CodecError("malformed DRI segment");
          restart_interval_ = u16(body);
          break;
        case kSOF0:
          parse_sof(body, end);
          have_frame = true;
          break;
        case kSOS: {
          if (!have_frame) throw CodecError("SOS before SOF0");
          parse_sos(body, end);
          pos_ = end;
          CoeffImage img = decode_scan();
          expect_eoi();
          return img;
        }
        case kDNL: throw CodecError("unsupported JPEG: DNL marker");
        default: break;  // APPn, COM and friends
      }
      pos_ = end;
    }
  }

 private:
  std::uint8_t next_marker() {
    if (pos_ >= s_.size() || s_[pos_] != 0xFF)
      throw CodecError(pos_ >= s_.size() ? "truncated stream: missing marker" : "expected a marker");
    while (pos_ < s_.size() && s_[pos_] == 0xFF) ++pos_;
    if (pos_ >= s_.size()) throw CodecError("truncated stream: missing marker");
    return s_[pos_++];
  }

  std::size_t u16(std::size_t p) const {
    if (p + 1 >= s_.size()) throw CodecError("truncated stream");
    return (static_cast<std::size_t>(s_[p]) << 8) | s_[p + 1];
  }

  std::size_t segment_length() const {
    const std::size_t len = u16(pos_);
    if (len < 2 || pos_ + len > s_.size()) throw CodecError("truncated stream: segment overruns data");
    return len;
  }

  void parse_dqt(std::size_t p, std::size_t end) {
    while (p < end) {
      const int pq = s_[p] >> 4, tq = s_[p] & 15;
      if (pq != 0) throw CodecError("unsupported JPEG: 16-bit quantization table");
      if (tq > 3) throw CodecError("malformed DQT: table id > 3");
      if (p + 65 > end) throw CodecError("truncated DQT segment");
      QuantTable q;
      for (int k = 0; k < 64; ++k) {
        const std::uint8_t v = s_[p + 1 + static_cast<std::size_t>(k)];
        if (v == 0) throw CodecError("malformed DQT: zero quantization step");
        q.steps[static_cast<std::size_t>(kZigzagToNatural[k])] = v;
      }
      quant_[tq] = q;
      have_quant_[tq] = true;
      p += 65;
    }
  }

  void parse_dht(std::size_t p, std::size_t end) {
    while (p < end) {
      if (p + 17 > end) throw CodecError("truncated DHT segment");
      const int tc = s_[p] >> 4, th = s_[p] & 15;
      if (tc > 1 || th > 1)
        throw CodecError("unsupported Huffman table id (baseline allows classes 0-1, ids 0-1)");
      HuffmanSpec spec;
      std::size_t total = 0;
      for (int i = 0; i < 16; ++i) {
        spec.counts[static_cast<std::size_t>(i)] = s_[p + 1 + static_cast<std::size_t>(i)];
        total += spec.counts[static_cast<std::size_t>(i)];
      }
      if (total > 256 || p + 17 + total > end) throw CodecError("malformed DHT segment");
      spec.symbols.assign(s_.begin() + static_cast<std::ptrdiff_t>(p + 17),
                          s_.begin() + static_cast<std::ptrdiff_t>(p + 17 + total));
      (tc == 0 ? dc_ : ac_)[th] = HuffmanDecoder(spec);
      p += 17 + total;
    }
  }

  void parse_sof(std::size_t p, std::size_t end) {
    if (end - p < 6) throw CodecError("truncated SOF0 segment");
    if (s_[p] != 8) throw CodecError("unsupported JPEG: sample precision " + std::to_string(s_[p]));
    frame_.height = u16(p + 1);
    frame_.width = u16(p + 3);
    const int nf = s_[p + 5];
    if (nf != 1)
      throw CodecError("unsupported JPEG: " + std::to_string(nf) +
                       " components (only single-component grayscale is accepted)");
    if (end - p < 9) throw CodecError("truncated SOF0 segment");
    if (frame_.width == 0 || frame_.height == 0) throw CodecError("unsupported JPEG: zero image dimension");
    frame_.component_id = s_[p + 6];
    frame_.quant_id = s_[p + 8];
    if (frame_.quant_id > 3) throw CodecError("malformed SOF0: quantization table id > 3");
  }

  void parse_sos(std::size_t p, std::size_t end) {
    if (end - p < 1 || s_[p] != 1) throw CodecError("unsupported JPEG: scan with more than one component");
    if (end - p < 6) throw CodecError("truncated SOS segment");
    if (s_[p + 1] != frame_.component_id) throw CodecError("SOS references an unknown component");
    dc_id_ = s_[p + 2] >> 4;
    ac_id_ = s_[p + 2] & 15;
    if (dc_id_ > 1 || ac_id_ > 1) throw CodecError("SOS references an unsupported Huffman table");
    if (s_[p + 3] != 0 || s_[p + 4] != 63 || s_[p + 5] != 0)
      throw CodecError("unsupported JPEG: spectral selection / successive approximation in scan");
  }

  CoeffImage decode_scan() {
    if (!have_quant_[frame_.quant_id]) throw CodecError("missing quantization table");
    const auto& dct = dc_[dc_id_];
    const auto& act = ac_[ac_id_];
    if (!dct.defined || !act.defined) throw CodecError("missing Huffman table");
    CoeffImage img(frame_.width, frame_.height, quant_[frame_.quant_id]);
    BitReader br(s_, pos_);
    int pred = 0;
    int rst = 0;
    for (std::size_t b = 0; b < img.block_count(); ++b) {
      if (restart_interval_ && b > 0 && b % restart_interval_ == 0) {
        br.restart(rst++);
        pred = 0;
      }
      std::int16_t* blk = img.coeffs.data() + b * 64;
      const int dcat = decode_symbol(br, dct);
      if (dcat > 11) throw CodecError("corrupt entropy data: DC category > 11");
      pred += extend(br.bits(dcat), dcat);
      if (pred < -2048 || pred > 2047) throw CodecError("corrupt entropy data: DC out of range");
      blk[0] = static_cast<std::int16_t>(pred);
      for (int k = 1; k < 64;) {
        const int sym = decode_symbol(br, act);
        const int run = sym >> 4, cat = sym & 15;
        if (cat == 0) {
          if (run == 15) {
            k += 16;
            continue;
          }
          break;  // EOB
        }
        k += run;
        if (k > 63 || cat > 10) throw CodecError("corrupt entropy data: AC run past block end");
        blk[kZigzagToNatural[k]] = static_cast<std::int16_t>(extend(br.bits(cat), cat));
        ++k;
      }
    }
    pos_ = br.end_position();
    return img;
  }

  void expect_eoi() {
    for (;;) {
      if (pos_ + 1 >= s_.size()) throw CodecError("truncated stream: missing EOI");
      const std::uint8_t m = next_marker();
      if (m == kEOI) return;
      if (m >= 0xD0 && m <= 0xD7) continue;  // trailing restart marker
      if (m == kSOS) throw CodecError("unsupported JPEG: multiple scans");
      pos_ += segment_length();
    }
  }

  std::span<const std::uint8_t> s_;
  std::size_t pos_ = 0;
  std::array<QuantTable, 4> quant_{};
  std::array<bool, 4> have_quant_{};
  std::array<HuffmanDecoder, 2> dc_{}, ac_{};
  FrameInfo frame_;
  int dc_id_ = 0, ac_id_ = 0;
  std::size_t restart_interval_ = 0;
};

}  // namespace

CoeffImage decode_to_coeffs(std::span<const std::uint8_t> stream) { return Parser(stream).run(); }

GrayImage decode_to_pixels(std::span<const std::uint8_t> stream) {
  return coeffs_to_pixels(decode_to_coeffs(stream));
}

JpegStream recompress(std::span<const std::uint8_t> stream, int qf2) {
  return encode_gray(decode_to_pixels(stream), qf2);
}

}  // namespace jcnn::jpeg
