#include "jcnn/mbfdf.hpp"

#include <Eigen/Dense>
#include <cstdio>
#include <stdexcept>

#include "jcnn/errors.hpp"
#include "jcnn/zigzag.hpp"

namespace jcnn {

int first_significant_digit(long v) {
  if (v == 0) throw std::invalid_argument("first_significant_digit: zero has no significant digit");
  unsigned long a = v < 0 ? 0ul - static_cast<unsigned long>(v) : static_cast<unsigned long>(v);
  while (a >= 10) a /= 10;
  return static_cast<int>(a);
}

MbfdfVector extract_mbfdf(const jpeg::CoeffImage& c) {
  std::array<std::array<std::size_t, 9>, kMbfdfModes> counts{};
  for (std::size_t b = 0; b < c.block_count(); ++b) {
    const std::int16_t* blk = c.coeffs.data() + b * 64;
    for (std::size_t k = 1; k <= kMbfdfModes; ++k) {
      const int v = blk[kZigzagToNatural[k]];
      if (v != 0) ++counts[k - 1][static_cast<std::size_t>(first_significant_digit(v) - 1)];
    }
  }
  MbfdfVector f{};
  for (std::size_t k = 0; k < kMbfdfModes; ++k) {
    std::size_t total = 0;
    for (auto n : counts[k]) total += n;
    if (total == 0) continue;
    for (std::size_t d = 0; d < 9; ++d)
      f[k * 9 + d] = static_cast<double>(counts[k][d]) / static_cast<double>(total);
  }
  return f;
}

namespace {

Eigen::MatrixXd stack(std::span<const std::vector<double>> rows, std::size_t dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw ShapeError("fld: feature vectors differ in length");
    for (std::size_t j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace

FldModel fld_train(std::span<const std::vector<double>> class0, std::span<const std::vector<double>> class1) {
  if (class0.size() < 2 || class1.size() < 2) throw DataError("fld: each class needs at least 2 samples");
  const std::size_t dim = class0.front().size();
  if (dim == 0) throw ShapeError("fld: empty feature vectors");
  const Eigen::MatrixXd x0 = stack(class0, dim), x1 = stack(class1, dim);
  const Eigen::VectorXd mu0 = x0.colwise().mean(), mu1 = x1.colwise().mean();
  const Eigen::MatrixXd c0 = x0.rowwise() - mu0.transpose();
  const Eigen::MatrixXd c1 = x1.rowwise() - mu1.transpose();
  Eigen::MatrixXd sw = c0.transpose() * c0 + c1.transpose() * c1;
  double eps = 1e-6 * sw.trace() / static_cast<double>(dim);
  if (!(eps > 0.0)) eps = 1e-12;  // both classes constant
  sw.diagonal().array() += eps;

  const Eigen::VectorXd w = sw.ldlt().solve(mu1 - mu0);
  FldModel m;
  m.w.assign(w.data(), w.data() + w.size());
  m.mean0 = w.dot(mu0);
  m.mean1 = w.dot(mu1);
  if (m.mean1 < m.mean0) {
    for (auto& v : m.w) v = -v;
    m.mean0 = -m.mean0;
    m.mean1 = -m.mean1;
  }
  m.threshold = 0.5 * (m.mean0 + m.mean1);
  return m;
}

double fld_project(const FldModel& m, std::span<const double> x) {
  if (x.size() != m.w.size()) throw ShapeError("fld: feature length does not match the model");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += m.w[i] * x[i];
  return s;
}

int fld_classify(const FldModel& m, std::span<const double> x) { return fld_project(m, x) > m.threshold ? 1 : 0; }

void write_mbfdf_csv(std::ostream& out, std::span<const MbfdfVector> features, std::span<const int> labels) {
  if (features.size() != labels.size()) throw ShapeError("csv: features and labels differ in count");
  for (std::size_t j = 0; j < kMbfdfDims; ++j) out << 'f' << j + 1 << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (double v : features[i]) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      out << buf;
    }
    out << labels[i] << '\n';
  }
}

}  // namespace jcnn
