#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace madcnn::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps exact zeros and roundoff
/// sized gradients from dominating the ratio.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares `analytic` (dL/dx) against central differences of `loss` around
/// `x`, perturbing every coordinate by +/- eps. `x` is restored on return.
GradCheckResult gradient_check(const std::function<double(std::span<const double>)>& loss,
                               std::span<double> x, std::span<const double> analytic,
                               double eps = 1e-5);

}  // namespace madcnn::nn
