#include <bit>
#include <cstring>
#include <map>

#include "jcnn/errors.hpp"
#include "jcnn/jpeg.hpp"
#include "jcnn/model.hpp"

namespace jcnn {

namespace {

constexpr char kMagic[5] = {'D', 'J', 'P', 'G', '1'};

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }

  std::vector<std::uint8_t> out;

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }
  std::uint64_t le(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint8_t flag(bool b) { return b ? 1 : 0; }

bool read_flag(Reader& r, const char* what) {
  const auto v = r.u8();
  if (v > 1) throw FormatError(std::string("checkpoint: bad ") + what + " flag");
  return v == 1;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net, const CheckpointMeta& meta) {
  const NetworkConfig& c = net.config();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u8(kCheckpointVersion);
  w.u8(flag(c.use_intra));
  w.u8(flag(c.use_abs));
  w.u8(flag(c.use_bn));
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.u8(static_cast<std::uint8_t>(c.pooling));
  w.u8(static_cast<std::uint8_t>(c.input_scaling));
  w.u32(static_cast<std::uint32_t>(c.fc1_units));
  w.u32(static_cast<std::uint32_t>(c.grid_x));
  w.u32(static_cast<std::uint32_t>(c.grid_y));
  w.u32(static_cast<std::uint32_t>(c.subbands));
  w.f64(c.bn_tau);
  w.f64(c.bn_xi);

  const auto records = net.state();
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.u32(static_cast<std::uint32_t>(r.value->rank()));
    for (auto e : r.value->shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : r.value->data()) w.f32(v);
  }

  w.u32(meta.epoch);
  w.f64(meta.val_accuracy);
  w.u64(meta.seed);
  w.u32(meta.qf1);
  w.u32(meta.qf2);
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw FormatError("checkpoint: bad magic (not a model checkpoint)");
  const auto version = r.u8();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  NetworkConfig c;
  c.use_intra = read_flag(r, "intra");
  c.use_abs = read_flag(r, "abs");
  c.use_bn = read_flag(r, "bn");
  const auto act = r.u8(), pool = r.u8(), scaling = r.u8();
  if (act > 1 || pool > 1 || scaling > 1) throw FormatError("checkpoint: bad enum in config block");
  c.activation = static_cast<Activation>(act);
  c.pooling = static_cast<Pooling>(pool);
  c.input_scaling = static_cast<CoeffScaling>(scaling);
  c.fc1_units = r.u32();
  c.grid_x = r.u32();
  c.grid_y = r.u32();
  c.subbands = r.u32();
  c.bn_tau = r.f64();
  c.bn_xi = r.f64();
  if (c.grid_x > 4096 || c.grid_y > 4096 || c.fc1_units > (1u << 20))
    throw FormatError("checkpoint: implausible network dimensions");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  Checkpoint ck{Network<float>(c, 0), {}};
  std::map<std::string, Tensor<float>*> expected;
  for (auto& s : ck.net.state()) expected.emplace(s.name, s.value);

  const std::uint32_t count = r.u32();
  if (count != expected.size())
    throw FormatError("checkpoint: expected " + std::to_string(expected.size()) + " tensors, found " +
                      std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    if (len > 256) throw FormatError("checkpoint: tensor name too long");
    const std::string name = r.str(len);
    auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    Tensor<float>& t = *it->second;
    const std::uint32_t rank = r.u32();
    Shape s(rank);
    for (auto& e : s) e = r.u32();
    if (s != t.shape())
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(s) + ", model expects " +
                        shape_str(t.shape()));
    for (auto& v : t.storage()) v = r.f32();
    expected.erase(it);
  }

  ck.meta.epoch = r.u32();
  ck.meta.val_accuracy = r.f64();
  ck.meta.seed = r.u64();
  ck.meta.qf1 = r.u32();
  ck.meta.qf2 = r.u32();
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after metadata");
  ck.net.set_bn_updates(1);
  return ck;
}

void save_checkpoint(const Network<float>& net, const CheckpointMeta& meta, const std::filesystem::path& path) {
  jpeg::write_file(path, serialize_checkpoint(net, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(jpeg::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Prediction predict_stream(Network<float>& net, std::span<const std::uint8_t> jpeg_stream) {
  const jpeg::CoeffImage c = jpeg::decode_to_coeffs(jpeg_stream);
  const NetworkConfig& cfg = net.config();
  if (c.blocks_high != cfg.grid_x || c.blocks_wide != cfg.grid_y)
    throw DataError("image is " + std::to_string(c.width) + "x" + std::to_string(c.height) + ", model expects " +
                    std::to_string(cfg.grid_y * 8) + "x" + std::to_string(cfg.grid_x * 8));
  const Tensor<float> p = net.predict_proba(assemble_subbands<float>(c, cfg.input_scaling));
  Prediction out;
  out.p_double = p(0, 1);
  out.label = p(0, 1) > p(0, 0) ? 1 : 0;
  out.probability = out.label ? p(0, 1) : p(0, 0);
  return out;
}

}  // namespace jcnn
