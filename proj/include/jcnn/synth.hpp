#pragma once

// Synthetic stand-in for a natural grayscale photo corpus: 1/f fractal
// background, soft-edged occluding shapes (some textured), an illumination
// ramp and sensor noise. Deterministic in the seed.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "jcnn/jpeg.hpp"

namespace jcnn {

jpeg::GrayImage synth_natural_image(std::size_t width, std::size_t height, std::uint64_t seed);

/// Writes img_00000.pgm ... into `dir`; returns the paths.
std::vector<std::filesystem::path> synthesize_corpus(const std::filesystem::path& dir, std::size_t count,
                                                     std::size_t size, std::uint64_t seed);

}  // namespace jcnn
