#include "madcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "madcnn/error.hpp"

namespace madcnn::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradient_check(const std::function<double(std::span<const double>)>& loss,
                               std::span<double> x, std::span<const double> analytic,
                               double eps) {
  if (x.size() != analytic.size()) throw ShapeError("gradient_check: gradient size mismatch");
  if (!(eps > 0.0)) throw InputError("gradient_check: eps must be positive");

  GradCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double plus = loss(x);
    x[i] = saved - eps;
    const double minus = loss(x);
    x[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus) || !std::isfinite(analytic[i])) {
      throw NumericError("gradient_check: non-finite value at coordinate " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (i == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
      result.analytic_at_worst = analytic[i];
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

}  // namespace madcnn::nn
