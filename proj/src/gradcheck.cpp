#include "irisgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace irisgrad {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<double>& point, const Shape& shape) {
  NoGradScope no_grad;
  Tensor out = f(Tensor(shape, point));
  if (out.size() != 1) {
    throw std::invalid_argument("grad_check: function must be scalar-valued, got shape " +
                                shape_string(out.shape()));
  }
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  const Shape shape = x.shape();
  std::vector<double> point(x.values().begin(), x.values().end());

  const double first = evaluate(f, point, shape);
  const double second = evaluate(f, point, shape);
  if (first != second) throw std::runtime_error("grad_check: function is not deterministic");

  GradCheckResult result;
  {
    ComputationRecord record;
    RecordScope scope(record);
    Tensor leaf(shape, point, true);
    Tensor out = f(leaf);
    record.backward(out);
    if (leaf.has_grad()) {
      result.analytic.assign(leaf.grad().begin(), leaf.grad().end());
    } else {
      result.analytic.assign(point.size(), 0.0);
    }
  }

  result.numeric.resize(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double up = evaluate(f, point, shape);
    point[i] = saved - eps;
    const double down = evaluate(f, point, shape);
    point[i] = saved;
    result.numeric[i] = (up - down) / (2.0 * eps);
    const double err = std::abs(result.analytic[i] - result.numeric[i]) /
                       std::max(1.0, std::abs(result.analytic[i]));
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  return result;
}

}  // namespace irisgrad
