#pragma once

// Dataset protocol: seeded 3:1 train/test split by source image, four
// 256x256 quadrant tiles per 512x512 image, single (QF2) and double
// (QF1 then QF2) compression of every tile, an 11:1 train/validation split
// of the training tiles, and a JSON-lines manifest of every file.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jcnn/jpeg.hpp"
#include "jcnn/model.hpp"
#include "jcnn/subbands.hpp"

namespace jcnn {

enum class Split : std::uint8_t { train, val, test };
enum class Label : std::uint8_t { single = 0, dbl = 1 };

const char* to_string(Split s);
const char* to_string(Label l);
Split parse_split(const std::string& s);
Label parse_label(const std::string& s);

inline constexpr std::size_t kSourceSize = 512;
inline constexpr std::size_t kTileSize = 256;

/// Quality factors of the experimental grid: 60, 65, ..., 95.
const std::vector<int>& qf_grid();
bool in_qf_grid(int qf);

/// Top-left, top-right, bottom-left, bottom-right.
std::array<jpeg::GrayImage, 4> quadrants(const jpeg::GrayImage& img);

struct Tile {
  std::string tile_id;  // <source stem>_<quadrant>
  std::string source;   // source stem
  Split split = Split::train;
  jpeg::GrayImage pixels;
};

struct TileInventory {
  std::vector<std::string> train_sources, test_sources;  // sorted
  std::vector<Tile> tiles;                               // sorted by tile id
};

/// *.pgm files in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_pgm_files(const std::filesystem::path& dir);

/// Seeded shuffle of the names, first round(3N/4) go to train.
std::pair<std::vector<std::string>, std::vector<std::string>> split_sources(std::vector<std::string> names,
                                                                            std::uint64_t seed);

/// Loads every PGM, splits by source image, cuts the tiles. Any image that is
/// not 512x512 is rejected by name.
TileInventory split_and_tile(const std::filesystem::path& pgm_dir, std::uint64_t seed);

/// Moves round(N/12) of the given training tile ids to validation (seeded).
/// Returns the validation ids, sorted.
std::vector<std::string> train_val_split(std::vector<std::string> train_tile_ids, std::uint64_t seed);

struct ManifestRecord {
  std::string tile_id;
  std::string source_image;
  Split split = Split::train;
  Label label = Label::single;
  std::optional<int> qf1;  // doubles only
  int qf2 = 0;
  std::string file_path;  // relative to the manifest's directory
  std::string pair_id;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

using Manifest = std::vector<ManifestRecord>;

/// Compresses every tile once (QF2) and twice (QF1, then QF2) under
/// <out_dir>/single and <out_dir>/double. Records are ordered by tile id,
/// single before double. Rejects qf1 == qf2 and values off the grid.
Manifest materialize_pair_dataset(const std::vector<Tile>& tiles, int qf1, int qf2,
                                  const std::filesystem::path& out_dir);

struct BuildSummary {
  std::filesystem::path dataset_dir;   // <out>/<qf1>_<qf2>
  std::filesystem::path manifest_path;
  std::size_t train_tiles = 0, val_tiles = 0, test_tiles = 0, files = 0;
};

/// split_and_tile -> train_val_split -> materialize_pair_dataset -> manifest.
BuildSummary build_dataset(const std::filesystem::path& pgm_dir, const std::filesystem::path& out_root, int qf1,
                           int qf2, std::uint64_t seed);

std::string manifest_line(const ManifestRecord& r);
ManifestRecord parse_manifest_line(const std::string& line);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Throws DataError when a double lacks exactly one single partner of the
/// same tile, or a source image appears in both train/val and test.
void validate_manifest(const Manifest& m);

/// The (qf1, qf2) cell of a manifest; all doubles must agree.
std::pair<int, int> manifest_qf_pair(const Manifest& m);

/// Decodes the pairs of one split into network inputs. Missing files are
/// all listed in the error.
PairSet load_pairs(const Manifest& m, const std::filesystem::path& manifest_dir, Split split,
                   const NetworkConfig& cfg);
SampleSet load_samples(const Manifest& m, const std::filesystem::path& manifest_dir, Split split,
                       const NetworkConfig& cfg);

/// Quantized coefficients of every file of a split, with labels (0/1), in
/// manifest order.
struct CoeffSet {
  std::vector<jpeg::CoeffImage> images;
  std::vector<int> labels;
  std::vector<std::string> ids;
};
CoeffSet load_coeffs(const Manifest& m, const std::filesystem::path& manifest_dir, Split split);

}  // namespace jcnn
