#pragma once

#include <functional>
#include <vector>

#include "irisgrad/tensor.hpp"

namespace irisgrad {

struct GradCheckResult {
  // max_i |analytic_i - numeric_i| / max(1, |analytic_i|)
  double max_relative_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Compares the reverse-mode gradient of scalar-valued f at x against
// central differences with step eps. Throws if f is not deterministic or
// not scalar-valued.
GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-5);

}  // namespace irisgrad
