#pragma once

// Mode-based first-digit features: for each of the first 20 zigzag AC modes,
// the distribution of leading decimal digits 1..9 over the mode's nonzero
// quantized coefficients (180 values), and a two-class Fisher discriminant.

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "jcnn/jpeg.hpp"

namespace jcnn {

inline constexpr std::size_t kMbfdfModes = 20;
inline constexpr std::size_t kMbfdfDims = kMbfdfModes * 9;

using MbfdfVector = std::array<double, kMbfdfDims>;

/// Leading decimal digit of |v|; v must be nonzero.
int first_significant_digit(long v);

/// Mode-major, digit-minor; a mode without nonzero coefficients is all zero.
MbfdfVector extract_mbfdf(const jpeg::CoeffImage& c);

struct FldModel {
  std::vector<double> w;
  double threshold = 0.0;
  double mean0 = 0.0, mean1 = 0.0;  // projected class means
};

/// w = (S_w + eps I)^-1 (mu1 - mu0), eps = 1e-6 trace(S_w) / D, threshold at the
/// midpoint of the projected means, oriented so class 1 projects above it.
/// Rows are feature vectors of equal length; each class needs >= 2 rows.
FldModel fld_train(std::span<const std::vector<double>> class0, std::span<const std::vector<double>> class1);

double fld_project(const FldModel& m, std::span<const double> x);
/// 1 iff the projection lies strictly above the threshold.
int fld_classify(const FldModel& m, std::span<const double> x);

/// Header "f1,...,f180,label" then one row per sample.
void write_mbfdf_csv(std::ostream& out, std::span<const MbfdfVector> features, std::span<const int> labels);

}  // namespace jcnn
