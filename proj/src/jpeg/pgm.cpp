#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "jcnn/errors.hpp"
#include "jcnn/jpeg.hpp"

namespace jcnn::jpeg {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw FormatError("PGM: malformed header");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 24)) throw FormatError("PGM: header value too large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage parse_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError("PGM: expected binary P5 magic");
  HeaderReader r(bytes);
  r.advance(2);
  const std::size_t w = r.number(), h = r.number(), maxval = r.number();
  if (w == 0 || h == 0) throw FormatError("PGM: zero dimension");
  if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported, got " + std::to_string(maxval));
  if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()])) throw FormatError("PGM: malformed header");
  r.advance(1);
  if (bytes.size() - r.pos() < w * h) throw FormatError("PGM: truncated pixel data");
  GrayImage img(w, h);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()), w * h, img.samples.begin());
  return img;
}

std::vector<std::uint8_t> format_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.samples.begin(), img.samples.end());
  return out;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  try {
    return parse_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) { write_file(path, format_pgm(img)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace jcnn::jpeg
