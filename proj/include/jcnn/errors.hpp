#pragma once

#include <stdexcept>
#include <string>

namespace jcnn {

/// Tensor shapes or parameter layouts that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unsupported JPEG / PGM data.
class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk artifacts other than images: checkpoints, manifests,
/// tensor dumps, reports.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that are well-formed but unusable for the requested operation
/// (empty splits, unpaired samples, wrong image sizes).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf showed up during a forward or backward pass.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& where)
      : std::runtime_error("non-finite value in " + where), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace jcnn
