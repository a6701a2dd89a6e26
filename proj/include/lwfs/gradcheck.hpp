#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lwfs/tensor.hpp"

namespace lwfs {

/// Norm floor of the relative error. Gradients that are identically zero
/// (a bias feeding a batch norm) leave only finite-difference noise of
/// about 1e-9; the floor keeps those from reading as failures.
inline constexpr double kGradNormFloor = 1e-3;

/// Relative error of an analytic gradient tensor against its numerical
/// estimate: ||a - n|| / max(||a||, ||n||, kGradNormFloor).
double gradient_rel_error(const Tensor<double>& analytic, const Tensor<double>& numeric);

struct FdResult {
  double max_rel_error = 0;
  std::size_t worst_param = 0;
  std::vector<Tensor<double>> numeric;
};

/// Central differences of the scalar `f` with respect to every entry of each
/// tensor in `params`. `f` must read the current parameter values through
/// the pointers. Throws NumericError when a probe is non-finite.
FdResult finite_diff_check(const std::function<double()>& f, std::span<Tensor<double>* const> params,
                           std::span<const Tensor<double>> analytic, double h = 1e-6);

struct GradCheckCase {
  std::string name;  // op name, or "composite"
  std::size_t index = 0;
  double max_rel_error = 0;
  std::size_t parameters = 0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double tolerance = 1e-4;

  bool passed() const;
  const GradCheckCase& worst() const;
  /// Worst error per case name, in first-seen order.
  std::vector<GradCheckCase> worst_per_name() const;
  std::vector<std::string> failing_names() const;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t cases_per_op = 7;
  std::size_t composite_cases = 4;
  double tolerance = 1e-4;
  double step = 1e-6;
};

/// Every differentiable op through a random vector-Jacobian product, plus
/// the composite local objective on a 2-block model with B = 4, at 64-bit.
GradCheckReport run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace lwfs
