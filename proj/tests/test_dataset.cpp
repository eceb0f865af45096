#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "jcnn/dataset.hpp"
#include "jcnn/errors.hpp"
#include "jcnn/mbfdf.hpp"
#include "jcnn/synth.hpp"
#include "test_util.hpp"

using namespace jcnn;
using jcnn::testing::TempDir;

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) { return jpeg::read_file(p); }

// Every regular file under root, relative path -> bytes.
std::map<std::string, std::vector<std::uint8_t>> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST(Grid, EightQualities) {
  EXPECT_EQ(qf_grid(), (std::vector<int>{60, 65, 70, 75, 80, 85, 90, 95}));
  EXPECT_TRUE(in_qf_grid(75));
  EXPECT_FALSE(in_qf_grid(62));
  EXPECT_FALSE(in_qf_grid(100));
}

TEST(Split, ThreeToOneBySourceImage) {
  std::vector<std::string> names;
  for (int i = 0; i < 10000; ++i) names.push_back("n" + std::to_string(i));
  const auto [tr, te] = split_sources(names, 3);
  EXPECT_EQ(tr.size(), 7500u);
  EXPECT_EQ(te.size(), 2500u);
  std::set<std::string> all(tr.begin(), tr.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 10000u);
  EXPECT_EQ(split_sources(names, 3), split_sources(names, 3));
  EXPECT_NE(split_sources(names, 3).first, split_sources(names, 4).first);
  // input order does not matter
  auto rev = names;
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(split_sources(rev, 3), split_sources(names, 3));
}

TEST(Split, ValidationIsOneTwelfth) {
  std::vector<std::string> ids;
  for (int i = 0; i < 30000; ++i) ids.push_back("t" + std::to_string(i));
  EXPECT_EQ(train_val_split(ids, 1).size(), 2500u);
  ids.resize(12);
  const auto v = train_val_split(ids, 1);
  EXPECT_EQ(v.size(), 1u);
  EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
}

TEST(Tiles, QuadrantsReassemble) {
  const auto img = synth_natural_image(512, 512, 5);
  const auto q = quadrants(img);
  for (std::size_t y = 0; y < 512; y += 13)
    for (std::size_t x = 0; x < 512; x += 11) {
      const std::size_t k = (y >= 256 ? 2 : 0) + (x >= 256 ? 1 : 0);
      EXPECT_EQ(q[k].at(x % 256, y % 256), img.at(x, y));
    }
  for (const auto& t : q) {
    EXPECT_EQ(t.width, 256u);
    EXPECT_EQ(t.height, 256u);
  }
  EXPECT_ANY_THROW(quadrants(jpeg::GrayImage(256, 256)));
}

TEST(Tiles, FourImagesGiveTwelvePlusFour) {
  TempDir dir("tiles");
  synthesize_corpus(dir.path(), 4, 512, 9);
  const TileInventory inv = split_and_tile(dir.path(), 2);
  EXPECT_EQ(inv.train_sources.size(), 3u);
  EXPECT_EQ(inv.test_sources.size(), 1u);
  ASSERT_EQ(inv.tiles.size(), 16u);
  std::size_t train = 0;
  for (const auto& t : inv.tiles) {
    train += t.split == Split::train;
    EXPECT_EQ(t.tile_id.rfind(t.source + "_", 0), 0u);
    const bool is_test = std::find(inv.test_sources.begin(), inv.test_sources.end(), t.source) != inv.test_sources.end();
    EXPECT_EQ(is_test, t.split == Split::test);
  }
  EXPECT_EQ(train, 12u);
  const TileInventory again = split_and_tile(dir.path(), 2);
  EXPECT_EQ(again.train_sources, inv.train_sources);
  EXPECT_EQ(again.tiles[5].pixels, inv.tiles[5].pixels);
}

TEST(Tiles, WrongSizeIsRejectedByName) {
  TempDir dir("badsize");
  synthesize_corpus(dir.path(), 2, 512, 1);
  jpeg::write_pgm(jpeg::GrayImage(512, 384, 9), dir / "odd_one.pgm");
  try {
    split_and_tile(dir.path(), 0);
    FAIL() << "accepted a 512x384 image";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("odd_one.pgm"), std::string::npos) << e.what();
  }
}

TEST(Materialize, SingleAndDoubleFiles) {
  TempDir dir("mat");
  std::vector<Tile> tiles;
  for (int i = 0; i < 3; ++i)
    tiles.push_back({"s" + std::to_string(i) + "_0", "s" + std::to_string(i), i == 2 ? Split::test : Split::train,
                     synth_natural_image(256, 256, static_cast<std::uint64_t>(i))});
  const Manifest m = materialize_pair_dataset(tiles, 70, 85, dir.path());
  ASSERT_EQ(m.size(), 6u);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m[i];
    EXPECT_EQ(r.label, i % 2 == 0 ? Label::single : Label::dbl);
    EXPECT_EQ(r.qf2, 85);
    EXPECT_EQ(r.qf1.has_value(), r.label == Label::dbl);
    EXPECT_EQ(r.pair_id, r.tile_id);
    const auto bytes = slurp(dir.path() / r.file_path);
    EXPECT_EQ(jpeg::decode_to_coeffs(bytes).quant, jpeg::quant_table_for_qf(85));
    const Tile& t = tiles[i / 2];
    const auto want = r.label == Label::single ? jpeg::encode_gray(t.pixels, 85)
                                               : jpeg::recompress(jpeg::encode_gray(t.pixels, 70), 85);
    EXPECT_EQ(bytes, want) << r.file_path;
  }
  EXPECT_EQ(m[0].file_path, "single/s0_0.jpg");
  EXPECT_EQ(m[1].file_path, "double/s0_0.jpg");
  EXPECT_THROW(materialize_pair_dataset(tiles, 85, 85, dir / "x"), DataError);
  EXPECT_THROW(materialize_pair_dataset(tiles, 72, 85, dir / "y"), DataError);
}

TEST(Manifest, LineRoundTrip) {
  ManifestRecord s{"a_1", "a", Split::val, Label::single, std::nullopt, 60, "single/a_1.jpg", "a_1"};
  ManifestRecord d = s;
  d.label = Label::dbl;
  d.qf1 = 95;
  d.file_path = "double/a_1.jpg";
  EXPECT_EQ(parse_manifest_line(manifest_line(s)), s);
  EXPECT_EQ(parse_manifest_line(manifest_line(d)), d);
  EXPECT_EQ(manifest_line(s).find("qf1"), std::string::npos);
  EXPECT_EQ(manifest_line(d).find('\n'), std::string::npos);
  EXPECT_THROW(parse_manifest_line("{\"tileId\": 3}"), FormatError);
  EXPECT_THROW(parse_manifest_line("not json"), FormatError);
}

TEST(Manifest, ValidationCatchesLeakageAndOrphans) {
  auto rec = [](std::string tile, std::string src, Split sp, Label l) {
    ManifestRecord r{tile, src, sp, l, std::nullopt, 60, "", tile};
    if (l == Label::dbl) r.qf1 = 95;
    r.file_path = std::string(l == Label::dbl ? "double/" : "single/") + tile + ".jpg";
    return r;
  };
  Manifest ok{rec("a_0", "a", Split::train, Label::single), rec("a_0", "a", Split::train, Label::dbl),
              rec("a_1", "a", Split::val, Label::single), rec("a_1", "a", Split::val, Label::dbl),
              rec("b_0", "b", Split::test, Label::single), rec("b_0", "b", Split::test, Label::dbl)};
  EXPECT_NO_THROW(validate_manifest(ok));
  EXPECT_EQ(manifest_qf_pair(ok), (std::pair<int, int>{95, 60}));

  auto leak = ok;
  leak.push_back(rec("a_2", "a", Split::test, Label::single));
  leak.push_back(rec("a_2", "a", Split::test, Label::dbl));
  EXPECT_THROW(validate_manifest(leak), DataError);

  auto orphan = ok;
  orphan.erase(orphan.begin() + 4);
  EXPECT_THROW(validate_manifest(orphan), DataError);

  auto twice = ok;
  twice.push_back(rec("b_0", "b", Split::test, Label::single));
  EXPECT_THROW(validate_manifest(twice), DataError);
}

TEST(Build, FullPipelineIsReproducible) {
  TempDir dir("build");
  synthesize_corpus(dir / "pgm", 4, 512, 3);
  const BuildSummary s = build_dataset(dir / "pgm", dir / "a", 60, 95, 7);
  EXPECT_EQ(s.dataset_dir, dir / "a" / "60_95");
  EXPECT_EQ(s.train_tiles + s.val_tiles, 12u);
  EXPECT_EQ(s.val_tiles, 1u);
  EXPECT_EQ(s.test_tiles, 4u);
  EXPECT_EQ(s.files, 32u);
  const Manifest m = load_manifest(s.manifest_path);
  EXPECT_EQ(m.size(), 32u);
  EXPECT_NO_THROW(validate_manifest(m));
  std::set<std::string> sources_test, sources_train;
  for (const auto& r : m) (r.split == Split::test ? sources_test : sources_train).insert(r.source_image);
  for (const auto& src : sources_test) EXPECT_EQ(sources_train.count(src), 0u);

  build_dataset(dir / "pgm", dir / "b", 60, 95, 7);
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));

  const NetworkConfig cfg;
  const PairSet tr = load_pairs(m, s.dataset_dir, Split::train, cfg);
  EXPECT_EQ(tr.size(), s.train_tiles);
  const SampleSet te = load_samples(m, s.dataset_dir, Split::test, cfg);
  EXPECT_EQ(te.size(), 8u);
  EXPECT_EQ(te.sample_shape, (Shape{32, 32, 20}));
  const CoeffSet cs = load_coeffs(m, s.dataset_dir, Split::val);
  EXPECT_EQ(cs.images.size(), 2u);
  EXPECT_EQ(cs.labels, (std::vector<int>{0, 1}));
}

TEST(Build, MissingFilesAreListed) {
  TempDir dir("missing");
  synthesize_corpus(dir / "pgm", 4, 512, 3);
  const BuildSummary s = build_dataset(dir / "pgm", dir / "d", 60, 95, 7);
  const Manifest m = load_manifest(s.manifest_path);
  std::vector<std::string> gone;
  for (const auto& r : m)
    if (r.split == Split::test && gone.size() < 2) {
      std::filesystem::remove(s.dataset_dir / r.file_path);
      gone.push_back(r.file_path);
    }
  try {
    load_samples(m, s.dataset_dir, Split::test, NetworkConfig{});
    FAIL() << "no error for missing files";
  } catch (const DataError& e) {
    for (const auto& g : gone) EXPECT_NE(std::string(e.what()).find(g), std::string::npos) << e.what();
  }
}

TEST(Build, RejectsOffGridAndDiagonal) {
  TempDir dir("grid");
  synthesize_corpus(dir / "pgm", 1, 512, 3);
  EXPECT_THROW(build_dataset(dir / "pgm", dir / "o", 80, 80, 1), DataError);
  EXPECT_THROW(build_dataset(dir / "pgm", dir / "o", 61, 80, 1), DataError);
}

// Double compression from a low to a high quality leaves a visible mark on the
// first-digit statistics: class means differ by more than the spread inside a
// class.
TEST(DoubleCompressionEffect, FirstDigitMeansSeparate) {
  std::vector<MbfdfVector> single, dbl;
  for (std::uint64_t i = 0; i < 12; ++i) {
    const auto img = synth_natural_image(512, 512, 100 + i);
    for (const auto& t : quadrants(img)) {
      single.push_back(extract_mbfdf(jpeg::decode_to_coeffs(jpeg::encode_gray(t, 95))));
      dbl.push_back(extract_mbfdf(jpeg::decode_to_coeffs(jpeg::recompress(jpeg::encode_gray(t, 60), 95))));
    }
  }
  auto mean = [](const std::vector<MbfdfVector>& v) {
    MbfdfVector m{};
    for (const auto& x : v)
      for (std::size_t j = 0; j < kMbfdfDims; ++j) m[j] += x[j] / static_cast<double>(v.size());
    return m;
  };
  auto l1 = [](const MbfdfVector& a, const MbfdfVector& b) {
    double s = 0;
    for (std::size_t j = 0; j < kMbfdfDims; ++j) s += std::abs(a[j] - b[j]);
    return s;
  };
  const MbfdfVector m0 = mean(single), m1 = mean(dbl);
  double spread = 0;
  for (const auto& x : single) spread += l1(x, m0) / static_cast<double>(2 * single.size());
  for (const auto& x : dbl) spread += l1(x, m1) / static_cast<double>(2 * dbl.size());
  EXPECT_GT(l1(m0, m1), spread);
}
