#include "jcnn/dataset.hpp"

#include <omp.h>

#include <algorithm>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "jcnn/errors.hpp"
#include "jcnn/rng.hpp"

namespace jcnn {

namespace fs = std::filesystem;

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

const char* to_string(Label l) { return l == Label::single ? "single" : "double"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

Label parse_label(const std::string& s) {
  if (s == "single") return Label::single;
  if (s == "double") return Label::dbl;
  throw FormatError("unknown label '" + s + "'");
}

const std::vector<int>& qf_grid() {
  static const std::vector<int> grid = {60, 65, 70, 75, 80, 85, 90, 95};
  return grid;
}

bool in_qf_grid(int qf) { return qf >= 60 && qf <= 95 && qf % 5 == 0; }

std::array<jpeg::GrayImage, 4> quadrants(const jpeg::GrayImage& img) {
  if (img.width != kSourceSize || img.height != kSourceSize)
    throw DataError("quadrants: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    ", expected 512x512");
  const std::size_t hw = img.width / 2, hh = img.height / 2;
  return {img.crop(0, 0, hw, hh), img.crop(hw, 0, hw, hh), img.crop(0, hh, hw, hh), img.crop(hw, hh, hw, hh)};
}

std::vector<fs::path> list_pgm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_sources(std::vector<std::string> names,
                                                                            std::uint64_t seed) {
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw DataError("duplicate source image name");
  Rng rng(seed);
  rng.shuffle(names);
  const std::size_t n_train = (3 * names.size() + 2) / 4;
  std::vector<std::string> train(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::string> test(names.begin() + static_cast<std::ptrdiff_t>(n_train), names.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

TileInventory split_and_tile(const fs::path& pgm_dir, std::uint64_t seed) {
  const auto files = list_pgm_files(pgm_dir);
  if (files.empty()) throw DataError("no .pgm files in " + pgm_dir.string());

  std::vector<jpeg::GrayImage> images(files.size());
  std::vector<std::string> errors(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(files.size()); ++i) {
    const auto& f = files[static_cast<std::size_t>(i)];
    try {
      jpeg::GrayImage img = jpeg::read_pgm(f);
      if (img.width != kSourceSize || img.height != kSourceSize)
        throw DataError(std::to_string(img.width) + "x" + std::to_string(img.height) + ", expected 512x512");
      images[static_cast<std::size_t>(i)] = std::move(img);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = f.filename().string() + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError("rejected source image " + e);

  std::map<std::string, std::size_t> by_stem;
  for (std::size_t i = 0; i < files.size(); ++i) by_stem.emplace(files[i].stem().string(), i);
  std::vector<std::string> names;
  for (const auto& [stem, _] : by_stem) names.push_back(stem);

  TileInventory inv;
  std::tie(inv.train_sources, inv.test_sources) = split_sources(names, seed);
  const std::set<std::string> test_set(inv.test_sources.begin(), inv.test_sources.end());
  for (const auto& [stem, idx] : by_stem) {
    const auto q = quadrants(images[idx]);
    for (std::size_t k = 0; k < 4; ++k) {
      Tile t;
      t.tile_id = stem + "_" + std::to_string(k);
      t.source = stem;
      t.split = test_set.count(stem) ? Split::test : Split::train;
      t.pixels = q[k];
      inv.tiles.push_back(std::move(t));
    }
  }
  std::sort(inv.tiles.begin(), inv.tiles.end(), [](const Tile& a, const Tile& b) { return a.tile_id < b.tile_id; });
  return inv;
}

std::vector<std::string> train_val_split(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);
  const std::size_t n_val = (ids.size() + 6) / 12;
  std::vector<std::string> val(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val.begin(), val.end());
  return val;
}

Manifest materialize_pair_dataset(const std::vector<Tile>& tiles, int qf1, int qf2, const fs::path& out_dir) {
  if (!in_qf_grid(qf1) || !in_qf_grid(qf2))
    throw DataError("quality factors must be in {60, 65, ..., 95}, got " + std::to_string(qf1) + " and " +
                    std::to_string(qf2));
  if (qf1 == qf2) throw DataError("qf1 == qf2 (" + std::to_string(qf1) + "): only off-diagonal pairs are defined");

  std::vector<const Tile*> order;
  for (const auto& t : tiles) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](const Tile* a, const Tile* b) { return a->tile_id < b->tile_id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->tile_id == order[i - 1]->tile_id) throw DataError("duplicate tile id " + order[i]->tile_id);

  fs::create_directories(out_dir / "single");
  fs::create_directories(out_dir / "double");

  std::vector<std::string> errors(order.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(order.size()); ++i) {
    const Tile& t = *order[static_cast<std::size_t>(i)];
    try {
      const auto single = jpeg::encode_gray(t.pixels, qf2);
      const auto dbl = jpeg::recompress(jpeg::encode_gray(t.pixels, qf1), qf2);
      jpeg::write_file(out_dir / "single" / (t.tile_id + ".jpg"), single);
      jpeg::write_file(out_dir / "double" / (t.tile_id + ".jpg"), dbl);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = t.tile_id + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError("failed to compress tile " + e);

  Manifest m;
  m.reserve(2 * order.size());
  for (const Tile* t : order) {
    ManifestRecord s;
    s.tile_id = t->tile_id;
    s.source_image = t->source;
    s.split = t->split;
    s.label = Label::single;
    s.qf2 = qf2;
    s.file_path = "single/" + t->tile_id + ".jpg";
    s.pair_id = t->tile_id;
    ManifestRecord d = s;
    d.label = Label::dbl;
    d.qf1 = qf1;
    d.file_path = "double/" + t->tile_id + ".jpg";
    m.push_back(std::move(s));
    m.push_back(std::move(d));
  }
  return m;
}

BuildSummary build_dataset(const fs::path& pgm_dir, const fs::path& out_root, int qf1, int qf2,
                           std::uint64_t seed) {
  if (!in_qf_grid(qf1) || !in_qf_grid(qf2))
    throw DataError("quality factors must be in {60, 65, ..., 95}, got " + std::to_string(qf1) + " and " +
                    std::to_string(qf2));
  if (qf1 == qf2) throw DataError("qf1 == qf2 (" + std::to_string(qf1) + "): only off-diagonal pairs are defined");

  TileInventory inv = split_and_tile(pgm_dir, derive_seed(seed, 1));
  std::vector<std::string> train_ids;
  for (const auto& t : inv.tiles)
    if (t.split == Split::train) train_ids.push_back(t.tile_id);
  const auto val_ids = train_val_split(train_ids, derive_seed(seed, 2));
  const std::set<std::string> val_set(val_ids.begin(), val_ids.end());
  for (auto& t : inv.tiles)
    if (val_set.count(t.tile_id)) t.split = Split::val;

  BuildSummary sum;
  sum.dataset_dir = out_root / (std::to_string(qf1) + "_" + std::to_string(qf2));
  sum.manifest_path = sum.dataset_dir / "manifest.jsonl";
  const Manifest m = materialize_pair_dataset(inv.tiles, qf1, qf2, sum.dataset_dir);
  validate_manifest(m);
  save_manifest(m, sum.manifest_path);
  for (const auto& t : inv.tiles) {
    if (t.split == Split::train) ++sum.train_tiles;
    else if (t.split == Split::val) ++sum.val_tiles;
    else ++sum.test_tiles;
  }
  sum.files = m.size();
  return sum;
}

std::string manifest_line(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["tileId"] = r.tile_id;
  j["sourceImage"] = r.source_image;
  j["split"] = to_string(r.split);
  j["label"] = to_string(r.label);
  if (r.qf1) j["qf1"] = *r.qf1;
  j["qf2"] = r.qf2;
  j["filePath"] = r.file_path;
  j["pairId"] = r.pair_id;
  return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: bad JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("manifest: record is not an object");
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw FormatError(std::string("manifest: missing string ") + key);
    return j[key].get<std::string>();
  };
  auto num = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer())
      throw FormatError(std::string("manifest: missing integer ") + key);
    return j[key].get<int>();
  };
  ManifestRecord r;
  r.tile_id = str("tileId");
  r.source_image = str("sourceImage");
  r.split = parse_split(str("split"));
  r.label = parse_label(str("label"));
  if (r.label == Label::dbl) r.qf1 = num("qf1");
  else if (j.contains("qf1")) throw FormatError("manifest: single record " + r.tile_id + " carries qf1");
  r.qf2 = num("qf2");
  r.file_path = str("filePath");
  r.pair_id = str("pairId");
  return r;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  std::string text;
  for (const auto& r : m) {
    text += manifest_line(r);
    text += '\n';
  }
  jpeg::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.push_back(parse_manifest_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void validate_manifest(const Manifest& m) {
  std::map<std::string, std::size_t> singles;
  std::map<std::string, Split> source_split;
  auto side = [](Split s) { return s == Split::test ? 1 : 0; };
  for (const auto& r : m) {
    auto [it, fresh] = source_split.emplace(r.source_image, r.split);
    if (!fresh && side(it->second) != side(r.split))
      throw DataError("manifest: source image " + r.source_image + " appears in both training and test splits");
    if (r.label == Label::single) ++singles[r.pair_id];
  }
  std::map<std::string, const ManifestRecord*> single_of;
  for (const auto& r : m)
    if (r.label == Label::single) single_of[r.pair_id] = &r;
  std::set<std::string> paired;
  for (const auto& r : m) {
    if (r.label != Label::dbl) continue;
    const auto n = singles.count(r.pair_id) ? singles[r.pair_id] : 0;
    if (n != 1)
      throw DataError("manifest: double " + r.tile_id + " has " + std::to_string(n) + " single partners");
    const ManifestRecord& s = *single_of[r.pair_id];
    if (s.tile_id != r.tile_id || s.split != r.split || s.qf2 != r.qf2)
      throw DataError("manifest: pair " + r.pair_id + " mixes tiles, splits or QF2");
    if (!paired.insert(r.pair_id).second) throw DataError("manifest: pair " + r.pair_id + " has two doubles");
  }
}

std::pair<int, int> manifest_qf_pair(const Manifest& m) {
  std::optional<std::pair<int, int>> qf;
  for (const auto& r : m) {
    if (r.label != Label::dbl) continue;
    const std::pair<int, int> p{*r.qf1, r.qf2};
    if (qf && *qf != p) throw DataError("manifest mixes several (qf1, qf2) pairs");
    qf = p;
  }
  if (!qf) throw DataError("manifest has no double-compressed records");
  return *qf;
}

namespace {

std::vector<const ManifestRecord*> records_of(const Manifest& m, Split split) {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : m)
    if (r.split == split) out.push_back(&r);
  if (out.empty()) throw DataError(std::string("manifest has no records in split '") + to_string(split) + "'");
  return out;
}

void check_files(const std::vector<const ManifestRecord*>& recs, const fs::path& dir) {
  std::vector<std::string> missing;
  for (const auto* r : recs)
    if (!fs::is_regular_file(dir / r->file_path)) missing.push_back((dir / r->file_path).string());
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " missing file(s):";
  for (const auto& p : missing) msg += "\n  " + p;
  throw DataError(msg);
}

/// Decodes every record in parallel; results in input order.
std::vector<jpeg::CoeffImage> decode_all(const std::vector<const ManifestRecord*>& recs, const fs::path& dir) {
  check_files(recs, dir);
  std::vector<jpeg::CoeffImage> out(recs.size());
  std::vector<std::string> errors(recs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(recs.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = jpeg::decode_to_coeffs(jpeg::read_file(dir / recs[k]->file_path));
    } catch (const std::exception& e) {
      errors[k] = recs[k]->file_path + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw CodecError(e);
  return out;
}

std::vector<float> tensor_of(const jpeg::CoeffImage& c, const NetworkConfig& cfg, const std::string& id) {
  if (c.blocks_high != cfg.grid_x || c.blocks_wide != cfg.grid_y)
    throw DataError(id + ": " + std::to_string(c.blocks_high) + "x" + std::to_string(c.blocks_wide) +
                    " blocks, model expects " + std::to_string(cfg.grid_x) + "x" + std::to_string(cfg.grid_y));
  const Tensor<float> t = assemble_subbands<float>(c, cfg.input_scaling);
  return {t.data().begin(), t.data().end()};
}

}  // namespace

PairSet load_pairs(const Manifest& m, const fs::path& dir, Split split, const NetworkConfig& cfg) {
  const auto recs = records_of(m, split);
  std::map<std::string, std::pair<const ManifestRecord*, const ManifestRecord*>> pairs;
  for (const auto* r : recs) {
    auto& p = pairs[r->pair_id];
    (r->label == Label::single ? p.first : p.second) = r;
  }
  std::vector<const ManifestRecord*> flat;
  std::vector<std::string> ids;
  for (const auto& [id, p] : pairs) {
    if (!p.first || !p.second) throw DataError("pair " + id + " is incomplete in split " + to_string(split));
    flat.push_back(p.first);
    flat.push_back(p.second);
    ids.push_back(id);
  }
  const auto coeffs = decode_all(flat, dir);
  PairSet set;
  set.sample_shape = cfg.sample_shape();
  set.single_values.reserve(ids.size() * set.sample_size());
  set.double_values.reserve(ids.size() * set.sample_size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    set.add(tensor_of(coeffs[2 * i], cfg, flat[2 * i]->file_path),
            tensor_of(coeffs[2 * i + 1], cfg, flat[2 * i + 1]->file_path), ids[i]);
  return set;
}

SampleSet load_samples(const Manifest& m, const fs::path& dir, Split split, const NetworkConfig& cfg) {
  const auto recs = records_of(m, split);
  const auto coeffs = decode_all(recs, dir);
  SampleSet set;
  set.sample_shape = cfg.sample_shape();
  set.values.reserve(recs.size() * set.sample_size());
  for (std::size_t i = 0; i < recs.size(); ++i)
    set.add(tensor_of(coeffs[i], cfg, recs[i]->file_path), recs[i]->label == Label::dbl ? 1 : 0, recs[i]->tile_id);
  return set;
}

CoeffSet load_coeffs(const Manifest& m, const fs::path& dir, Split split) {
  const auto recs = records_of(m, split);
  CoeffSet set;
  set.images = decode_all(recs, dir);
  for (const auto* r : recs) {
    set.labels.push_back(r->label == Label::dbl ? 1 : 0);
    set.ids.push_back(r->tile_id);
  }
  return set;
}

}  // namespace jcnn
