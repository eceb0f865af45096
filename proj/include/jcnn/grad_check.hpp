#pragma once

// Finite-difference verification of analytic gradients.
//
// A fragment is anything that can compute a scalar loss for an input, then
// back-propagate it:
//   double loss(const Tensor<double>& x);     // forward pass + loss
//   Tensor<double> backward();                // d loss / d x; fills param grads
//   std::vector<ParamRef<double>> params();
// grad_check perturbs every checked coordinate by +/- step and compares the
// central difference with the analytic value.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "jcnn/errors.hpp"
#include "jcnn/layers.hpp"
#include "jcnn/rng.hpp"
#include "jcnn/tensor.hpp"

namespace jcnn {

template <class F>
concept GradFragment = requires(F& f, const Tensor<double>& x) {
  { f.loss(x) } -> std::convertible_to<double>;
  { f.backward() } -> std::convertible_to<Tensor<double>>;
  { f.params() } -> std::convertible_to<std::vector<ParamRef<double>>>;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor);
  /// keeps gradients that are zero up to round-off from reading as 100% off.
  double abs_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  bool check_input = true;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst;       // entry holding the maximum
  std::string failure;     // set when a non-finite value aborted the check
  std::vector<GradCheckEntry> entries;
};

inline double gradient_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max == 0 || max >= n) return idx;
  rng.shuffle(idx);
  idx.resize(max);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class LossAt>
GradCheckEntry check_tensor(const std::string& name, Tensor<double>& value,
                            const Tensor<double>& analytic, LossAt&& loss_at,
                            const GradCheckOptions& opt, Rng& rng) {
  GradCheckEntry e;
  e.name = name;
  for (std::size_t i : pick_coords(value.size(), opt.max_coords_per_tensor, rng)) {
    const double orig = value[i];
    value[i] = orig + opt.step;
    const double lp = loss_at();
    value[i] = orig - opt.step;
    const double lm = loss_at();
    value[i] = orig;
    if (!std::isfinite(lp) || !std::isfinite(lm)) throw NonFiniteError("loss while perturbing " + name);
    const double numeric = (lp - lm) / (2.0 * opt.step);
    const double err = gradient_rel_error(analytic[i], numeric, opt.abs_floor);
    ++e.checked;
    if (err > e.max_rel_error || e.checked == 1) {
      e.max_rel_error = err;
      e.worst_index = i;
      e.analytic = analytic[i];
      e.numeric = numeric;
    }
  }
  return e;
}

}  // namespace detail

template <GradFragment F>
GradCheckReport grad_check(F& fragment, const Tensor<double>& input, double rel_tol,
                           const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  Rng rng(opt.seed);
  try {
    const double base = fragment.loss(input);
    if (!std::isfinite(base)) throw NonFiniteError("loss");
    Tensor<double> input_grad = fragment.backward();
    if (!input_grad.all_finite()) throw NonFiniteError("input gradient");

    auto params = fragment.params();
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(*p.grad);

    auto loss_at_input = [&] { return fragment.loss(input); };
    for (std::size_t k = 0; k < params.size(); ++k)
      report.entries.push_back(
          detail::check_tensor(params[k].name, *params[k].value, analytic[k], loss_at_input, opt, rng));

    if (opt.check_input) {
      Tensor<double> x = input;
      report.entries.push_back(detail::check_tensor(
          "input", x, input_grad, [&] { return fragment.loss(x); }, opt, rng));
    }
  } catch (const NonFiniteError& e) {
    report.passed = false;
    report.failure = e.what();
    return report;
  }

  for (const auto& e : report.entries)
    if (e.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = e.max_rel_error;
      report.worst = e.name;
    }
  report.passed = report.max_rel_error < rel_tol;
  return report;
}

}  // namespace jcnn
