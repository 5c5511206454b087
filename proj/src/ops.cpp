#include "irisgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace irisgrad {

namespace {

using detail::grad_buffer;
using detail::make_result;
using detail::should_record;

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
    case BinaryOp::pow: return "pow";
  }
  return "binary";
}

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::neg: return "neg";
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::sqrt: return "sqrt";
    case UnaryOp::abs: return "abs";
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::relu: return "relu";
    case UnaryOp::square: return "square";
    case UnaryOp::sin: return "sin";
    case UnaryOp::cos: return "cos";
    case UnaryOp::softplus: return "softplus";
  }
  return "unary";
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
    case BinaryOp::pow: return std::pow(a, b);
  }
  return 0.0;
}

// Reduces a full-size gradient onto a possibly broadcast (single element)
// input.
void accumulate_broadcast(TensorImpl& target, std::span<const double> g, bool broadcast) {
  auto buf = grad_buffer(target);
  if (broadcast) {
    double s = 0.0;
    for (double v : g) s += v;
    buf[0] += s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const bool a_bcast = a.size() == 1 && b.size() != 1;
  const bool b_bcast = b.size() == 1 && a.size() != 1;
  if (!a_bcast && !b_bcast && a.shape() != b.shape() && !(a.size() == 1 && b.size() == 1)) {
    throw std::invalid_argument(std::string(binary_name(op)) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Shape& shape = a_bcast ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  auto av = a.values();
  auto bv = b.values();
  if (op == BinaryOp::div) {
    for (double v : bv)
      if (v == 0.0) throw std::domain_error("div: division by exact zero");
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_bcast ? 0 : i];
    const double y = bv[b_bcast ? 0 : i];
    out[i] = apply_binary(op, x, y);
    if (op == BinaryOp::pow && !std::isfinite(out[i]) && std::isfinite(x) && std::isfinite(y)) {
      throw std::domain_error("pow: result not finite for base " + std::to_string(x) +
                              " and exponent " + std::to_string(y));
    }
  }
  ComputationRecord::BackwardFn fn;
  if (should_record({&a, &b})) {
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    std::vector<double> saved;
    if (op == BinaryOp::pow) saved = out;
    fn = [op, ai, bi, a_bcast, b_bcast, saved = std::move(saved)](std::span<const double> g) {
      const std::size_t n = g.size();
      const auto& av = ai->values;
      const auto& bv = bi->values;
      std::vector<double> ga, gb;
      if (ai->requires_grad) ga.resize(n);
      if (bi->requires_grad) gb.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = av[a_bcast ? 0 : i];
        const double y = bv[b_bcast ? 0 : i];
        double dx = 0.0, dy = 0.0;
        switch (op) {
          case BinaryOp::add: dx = 1.0; dy = 1.0; break;
          case BinaryOp::sub: dx = 1.0; dy = -1.0; break;
          case BinaryOp::mul: dx = y; dy = x; break;
          case BinaryOp::div: dx = 1.0 / y; dy = -x / (y * y); break;
          case BinaryOp::pow:
            dx = y == 0.0 ? 0.0 : y * std::pow(x, y - 1.0);
            if (!gb.empty()) {
              if (x > 0.0) {
                dy = saved[i] * std::log(x);
              } else if (x == 0.0) {
                dy = 0.0;
              } else {
                throw std::domain_error("pow: exponent gradient needs a positive base");
              }
            }
            break;
        }
        if (!ga.empty()) ga[i] = g[i] * dx;
        if (!gb.empty()) gb[i] = g[i] * dy;
      }
      if (!ga.empty()) accumulate_broadcast(*ai, ga, a_bcast);
      if (!gb.empty()) accumulate_broadcast(*bi, gb, b_bcast);
    };
  }
  return make_result(binary_name(op), shape, std::move(out), {a, b}, std::move(fn));
}

Tensor elementwise(BinaryOp op, const Tensor& a, double b) {
  return elementwise(op, a, Tensor::scalar(b));
}

Tensor elementwise(BinaryOp op, double a, const Tensor& b) {
  return elementwise(op, Tensor::scalar(a), b);
}

Tensor unary(UnaryOp op, const Tensor& a) {
  auto av = a.values();
  const std::size_t n = av.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    double y = 0.0;
    switch (op) {
      case UnaryOp::neg: y = -x; break;
      case UnaryOp::exp: y = std::exp(x); break;
      case UnaryOp::log:
        if (!(x > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(x));
        y = std::log(x);
        break;
      case UnaryOp::sqrt:
        if (x < 0.0) throw std::domain_error("sqrt: negative input " + std::to_string(x));
        y = std::sqrt(x);
        break;
      case UnaryOp::abs: y = std::abs(x); break;
      case UnaryOp::sigmoid: y = stable_sigmoid(x); break;
      case UnaryOp::tanh: y = std::tanh(x); break;
      case UnaryOp::relu: y = x > 0.0 ? x : 0.0; break;
      case UnaryOp::square: y = x * x; break;
      case UnaryOp::sin: y = std::sin(x); break;
      case UnaryOp::cos: y = std::cos(x); break;
      case UnaryOp::softplus: y = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); break;
    }
    out[i] = y;
  }
  ComputationRecord::BackwardFn fn;
  if (should_record({&a})) {
    auto ai = a.impl_ptr();
    std::vector<double> saved;
    if (op == UnaryOp::exp || op == UnaryOp::sqrt || op == UnaryOp::sigmoid || op == UnaryOp::tanh) {
      saved = out;
    }
    fn = [op, ai, saved = std::move(saved)](std::span<const double> g) {
      auto buf = grad_buffer(*ai);
      const auto& xv = ai->values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = xv[i];
        double d = 0.0;
        switch (op) {
          case UnaryOp::neg: d = -1.0; break;
          case UnaryOp::exp: d = saved[i]; break;
          case UnaryOp::log: d = 1.0 / x; break;
          case UnaryOp::sqrt:
            if (saved[i] == 0.0) throw std::domain_error("sqrt: gradient undefined at 0");
            d = 0.5 / saved[i];
            break;
          case UnaryOp::abs: d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
          case UnaryOp::sigmoid: d = saved[i] * (1.0 - saved[i]); break;
          case UnaryOp::tanh: d = 1.0 - saved[i] * saved[i]; break;
          case UnaryOp::relu: d = x > 0.0 ? 1.0 : 0.0; break;
          case UnaryOp::square: d = 2.0 * x; break;
          case UnaryOp::sin: d = std::cos(x); break;
          case UnaryOp::cos: d = -std::sin(x); break;
          case UnaryOp::softplus: d = stable_sigmoid(x); break;
        }
        buf[i] += g[i] * d;
      }
    };
  }
  return make_result(unary_name(op), a.shape(), std::move(out), {a}, std::move(fn));
}

Tensor atan2(const Tensor& y, const Tensor& x) {
  if (y.shape() != x.shape()) {
    throw std::invalid_argument("atan2: shape mismatch " + shape_string(y.shape()) + " vs " +
                                shape_string(x.shape()));
  }
  auto yv = y.values(), xv = x.values();
  std::vector<double> out(yv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::atan2(yv[i], xv[i]);
  ComputationRecord::BackwardFn fn;
  if (should_record({&y, &x})) {
    auto yi = y.impl_ptr(), xi = x.impl_ptr();
    fn = [yi, xi](std::span<const double> g) {
      std::span<double> gy, gx;
      if (yi->requires_grad) gy = grad_buffer(*yi);
      if (xi->requires_grad) gx = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double a = yi->values[i], b = xi->values[i];
        const double r2 = a * a + b * b;
        if (r2 == 0.0) continue;
        if (!gy.empty()) gy[i] += g[i] * b / r2;
        if (!gx.empty()) gx[i] -= g[i] * a / r2;
      }
    };
  }
  return make_result("atan2", y.shape(), std::move(out), {y, x}, std::move(fn));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(av[i], lo, hi);
  ComputationRecord::BackwardFn fn;
  if (should_record({&a})) {
    auto ai = a.impl_ptr();
    fn = [ai, lo, hi](std::span<const double> g) {
      auto buf = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = ai->values[i];
        if (x >= lo && x <= hi) buf[i] += g[i];
      }
    };
  }
  return make_result("clamp", a.shape(), std::move(out), {a}, std::move(fn));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                                shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::parallel::matmul(m, k, n, a.values(), b.values(), out);
  ComputationRecord::BackwardFn fn;
  if (should_record({&a, &b})) {
    auto ai = a.impl_ptr(), bi = b.impl_ptr();
    fn = [ai, bi, m, k, n](std::span<const double> g) {
      if (ai->requires_grad) {
        // dA = dC * B^T
        std::vector<double> bt(n * k);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bi->values[p * n + j];
        std::vector<double> da(m * k);
        kernels::parallel::matmul(m, n, k, g, bt, da);
        auto buf = grad_buffer(*ai);
        for (std::size_t i = 0; i < da.size(); ++i) buf[i] += da[i];
      }
      if (bi->requires_grad) {
        // dB = A^T * dC
        std::vector<double> at(k * m);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) at[p * m + i] = ai->values[i * k + p];
        std::vector<double> db(k * n);
        kernels::parallel::matmul(k, m, n, at, g, db);
        auto buf = grad_buffer(*bi);
        for (std::size_t i = 0; i < db.size(); ++i) buf[i] += db[i];
      }
    };
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, std::move(fn));
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Conv2dOptions& options) {
  if (x.ndim() != 3 || k.ndim() != 4 || k.dim(1) != x.dim(0)) {
    throw std::invalid_argument("conv2d: expected x[C x H x W] and k[F x C x kh x kw], got " +
                                shape_string(x.shape()) + " and " + shape_string(k.shape()));
  }
  kernels::Conv2dGeometry g;
  g.channels = x.dim(0);
  g.height = x.dim(1);
  g.width = x.dim(2);
  g.filters = k.dim(0);
  g.kernel_h = k.dim(2);
  g.kernel_w = k.dim(3);
  if (g.kernel_h % 2 == 0 || g.kernel_w % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel sides must be odd, got " + shape_string(k.shape()));
  }
  if (options.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  g.stride = options.stride;
  g.padding = options.padding;
  g.pad_h = options.pad_h.value_or(g.kernel_h / 2);
  g.pad_w = options.pad_w.value_or(g.kernel_w / 2);
  if (g.kernel_h > g.height + 2 * g.pad_h || g.kernel_w > g.width + 2 * g.pad_w) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(k.shape()) +
                                " larger than padded input " + shape_string(x.shape()));
  }
  if (g.padding == Padding::reflect && (g.pad_h >= g.height || g.pad_w >= g.width)) {
    throw std::invalid_argument("conv2d: reflect padding must be smaller than the input extent");
  }
  Shape out_shape{g.filters, g.out_h(), g.out_w()};
  std::vector<double> out(shape_size(out_shape));
  kernels::parallel::conv2d_forward(g, x.values(), k.values(), out);
  ComputationRecord::BackwardFn fn;
  if (should_record({&x, &k})) {
    auto xi = x.impl_ptr(), ki = k.impl_ptr();
    fn = [g, xi, ki](std::span<const double> dy) {
      if (xi->requires_grad) kernels::parallel::conv2d_backward_input(g, ki->values, dy, grad_buffer(*xi));
      if (ki->requires_grad) kernels::parallel::conv2d_backward_kernel(g, xi->values, dy, grad_buffer(*ki));
    };
  }
  return make_result("conv2d", std::move(out_shape), std::move(out), {x, k}, std::move(fn));
}

Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<std::size_t>& axes, double temperature) {
  const Shape& shape = x.shape();
  std::vector<bool> reduced(shape.size(), axes.empty());
  for (auto a : axes) {
    if (a >= shape.size()) {
      throw std::out_of_range("reduce: axis " + std::to_string(a) + " out of range for shape " +
                              shape_string(shape));
    }
    if (reduced[a]) throw std::invalid_argument("reduce: duplicate axis " + std::to_string(a));
    reduced[a] = true;
  }
  if (op == ReduceOp::max_smooth && !(temperature > 0.0)) {
    throw std::invalid_argument("reduce: max_smooth temperature must be positive");
  }
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) out_shape.push_back(shape[i]);
  const std::size_t n = x.size();
  const std::size_t m = shape_size(out_shape);

  // Output slot of every input element.
  std::vector<std::size_t> slot(n, 0);
  if (m > 1) {
    const auto in_strides = strides_of(shape);
    const auto out_strides = strides_of(out_shape);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t rem = i, o = 0, oa = 0;
      for (std::size_t a = 0; a < shape.size(); ++a) {
        const std::size_t coord = rem / in_strides[a];
        rem %= in_strides[a];
        if (!reduced[a]) o += coord * out_strides[oa++];
      }
      slot[i] = o;
    }
  }
  const double count = m == 0 ? 0.0 : static_cast<double>(n / std::max<std::size_t>(m, 1));
  auto xv = x.values();
  std::vector<double> out(m, 0.0);
  if (op == ReduceOp::max_smooth) {
    std::vector<double> peak(m, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) peak[slot[i]] = std::max(peak[slot[i]], xv[i]);
    for (std::size_t i = 0; i < n; ++i) out[slot[i]] += std::exp((xv[i] - peak[slot[i]]) / temperature);
    for (std::size_t j = 0; j < m; ++j) out[j] = peak[j] + temperature * std::log(out[j]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[slot[i]] += xv[i];
    if (op == ReduceOp::mean)
      for (auto& v : out) v /= count;
  }
  ComputationRecord::BackwardFn fn;
  if (should_record({&x})) {
    auto xi = x.impl_ptr();
    std::vector<double> saved;
    if (op == ReduceOp::max_smooth) saved = out;
    fn = [op, xi, slot = std::move(slot), saved = std::move(saved), count, temperature](
             std::span<const double> g) {
      auto buf = grad_buffer(*xi);
      for (std::size_t i = 0; i < buf.size(); ++i) {
        const std::size_t j = slot[i];
        switch (op) {
          case ReduceOp::sum: buf[i] += g[j]; break;
          case ReduceOp::mean: buf[i] += g[j] / count; break;
          case ReduceOp::max_smooth:
            buf[i] += g[j] * std::exp((xi->values[i] - saved[j]) / temperature);
            break;
        }
      }
    };
  }
  const char* name = op == ReduceOp::sum ? "sum" : (op == ReduceOp::mean ? "mean" : "max_smooth");
  return make_result(name, std::move(out_shape), std::move(out), {x}, std::move(fn));
}

Tensor grid_sample(const Tensor& x, const Tensor& coords) {
  if (x.ndim() != 2 || coords.ndim() < 1 || coords.shape().back() != 2) {
    throw std::invalid_argument("grid_sample: expected x[H x W] and coords[... x 2], got " +
                                shape_string(x.shape()) + " and " + shape_string(coords.shape()));
  }
  kernels::GridGeometry g{x.dim(0), x.dim(1), coords.size() / 2};
  Shape out_shape(coords.shape().begin(), coords.shape().end() - 1);
  std::vector<double> out(g.samples);
  kernels::parallel::grid_sample(g, x.values(), coords.values(), out);
  ComputationRecord::BackwardFn fn;
  if (should_record({&x, &coords})) {
    auto xi = x.impl_ptr(), ci = coords.impl_ptr();
    fn = [g, xi, ci](std::span<const double> grad) {
      std::span<double> gx, gc;
      if (xi->requires_grad) gx = grad_buffer(*xi);
      if (ci->requires_grad) gc = grad_buffer(*ci);
      const double maxx = static_cast<double>(g.src_w - 1), maxy = static_cast<double>(g.src_h - 1);
      const auto& src = xi->values;
      for (std::size_t s = 0; s < g.samples; ++s) {
        const double d = grad[s];
        if (d == 0.0) continue;
        const double rx = ci->values[2 * s], ry = ci->values[2 * s + 1];
        const double cx = std::clamp(rx, 0.0, maxx), cy = std::clamp(ry, 0.0, maxy);
        const auto x0 = static_cast<std::size_t>(std::floor(cx));
        const auto y0 = static_cast<std::size_t>(std::floor(cy));
        const std::size_t x1 = std::min(x0 + 1, g.src_w - 1);
        const std::size_t y1 = std::min(y0 + 1, g.src_h - 1);
        const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
        if (!gx.empty()) {
          gx[y0 * g.src_w + x0] += d * (1.0 - fy) * (1.0 - fx);
          gx[y0 * g.src_w + x1] += d * (1.0 - fy) * fx;
          gx[y1 * g.src_w + x0] += d * fy * (1.0 - fx);
          gx[y1 * g.src_w + x1] += d * fy * fx;
        }
        if (!gc.empty()) {
          const double v00 = src[y0 * g.src_w + x0], v01 = src[y0 * g.src_w + x1];
          const double v10 = src[y1 * g.src_w + x0], v11 = src[y1 * g.src_w + x1];
          const bool free_x = rx > 0.0 && rx < maxx;
          const bool free_y = ry > 0.0 && ry < maxy;
          if (free_x) gc[2 * s] += d * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
          if (free_y) gc[2 * s + 1] += d * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
        }
      }
    };
  }
  return make_result("grid_sample", std::move(out_shape), std::move(out), {x, coords}, std::move(fn));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  ComputationRecord::BackwardFn fn;
  if (should_record({&x})) {
    auto xi = x.impl_ptr();
    fn = [xi](std::span<const double> g) {
      auto buf = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    };
  }
  return make_result("reshape", std::move(shape), std::move(out), {x}, std::move(fn));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.ndim()) {
    throw std::out_of_range("slice: axis " + std::to_string(axis) + " out of range for shape " +
                            shape_string(x.shape()));
  }
  if (start + length > x.dim(axis)) {
    throw std::out_of_range("slice: range [" + std::to_string(start) + ", " +
                            std::to_string(start + length) + ") exceeds axis extent " +
                            std::to_string(x.dim(axis)));
  }
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  Shape out_shape = shape;
  out_shape[axis] = length;
  std::vector<double> out(outer * length * inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * extent + start) * inner, length * inner,
                out.data() + o * length * inner);
  ComputationRecord::BackwardFn fn;
  if (should_record({&x})) {
    auto xi = x.impl_ptr();
    fn = [xi, outer, inner, extent, start, length](std::span<const double> g) {
      auto buf = grad_buffer(*xi);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < length * inner; ++i)
          buf[(o * extent + start) * inner + i] += g[o * length * inner + i];
    };
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x}, std::move(fn));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw std::out_of_range("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) throw std::invalid_argument("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw std::invalid_argument("concat: shape mismatch " + shape_string(p.shape()) + " vs " +
                                  shape_string(first));
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * len * inner, len * inner, out.data() + (o * total + offset) * inner);
    offset += len;
  }
  ComputationRecord::BackwardFn fn;
  if (should_record(parts)) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    fn = [impls, offsets, outer, inner, total, axis](std::span<const double> g) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto& t = *impls[k];
        if (!t.requires_grad) continue;
        const std::size_t len = t.shape[axis];
        auto buf = grad_buffer(t);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len * inner; ++i)
            buf[o * len * inner + i] += g[(o * total + offsets[k]) * inner + i];
      }
    };
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts, std::move(fn));
}

Tensor stack_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_last: no inputs");
  const Shape& first = parts.front().shape();
  for (const auto& p : parts) {
    if (p.shape() != first) {
      throw std::invalid_argument("stack_last: shape mismatch " + shape_string(p.shape()) + " vs " +
                                  shape_string(first));
    }
  }
  const std::size_t n = shape_size(first), k = parts.size();
  Shape out_shape = first;
  out_shape.push_back(k);
  std::vector<double> out(n * k);
  for (std::size_t j = 0; j < k; ++j) {
    auto pv = parts[j].values();
    for (std::size_t i = 0; i < n; ++i) out[i * k + j] = pv[i];
  }
  ComputationRecord::BackwardFn fn;
  if (should_record(parts)) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    fn = [impls, n, k](std::span<const double> g) {
      for (std::size_t j = 0; j < k; ++j) {
        if (!impls[j]->requires_grad) continue;
        auto buf = grad_buffer(*impls[j]);
        for (std::size_t i = 0; i < n; ++i) buf[i] += g[i * k + j];
      }
    };
  }
  return make_result("stack", std::move(out_shape), std::move(out), parts, std::move(fn));
}

Tensor select(const Tensor& x, std::size_t index) {
  if (index >= x.size()) {
    throw std::out_of_range("select: index " + std::to_string(index) + " out of range for " +
                            shape_string(x.shape()));
  }
  ComputationRecord::BackwardFn fn;
  if (should_record({&x})) {
    auto xi = x.impl_ptr();
    fn = [xi, index](std::span<const double> g) { grad_buffer(*xi)[index] += g[0]; };
  }
  return make_result("select", Shape{}, {x.values()[index]}, {x}, std::move(fn));
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("upsample: expected [C x H x W], got " + shape_string(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<double> out(C * 4 * H * W);
  auto xv = x.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j)
        out[(c * 2 * H + i) * 2 * W + j] = xv[(c * H + i / 2) * W + j / 2];
  ComputationRecord::BackwardFn fn;
  if (should_record({&x})) {
    auto xi = x.impl_ptr();
    fn = [xi, C, H, W](std::span<const double> g) {
      auto buf = grad_buffer(*xi);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < 2 * H; ++i)
          for (std::size_t j = 0; j < 2 * W; ++j)
            buf[(c * H + i / 2) * W + j / 2] += g[(c * 2 * H + i) * 2 * W + j];
    };
  }
  return make_result("upsample", {C, 2 * H, 2 * W}, std::move(out), {x}, std::move(fn));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.ndim() < 1 || b.ndim() != 1 || b.dim(0) != x.dim(0)) {
    throw std::invalid_argument("add_channel_bias: bias " + shape_string(b.shape()) +
                                " does not match channels of " + shape_string(x.shape()));
  }
  const std::size_t C = x.dim(0), inner = x.size() / C;
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = b.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
  ComputationRecord::BackwardFn fn;
  if (should_record({&x, &b})) {
    auto xi = x.impl_ptr(), bi = b.impl_ptr();
    fn = [xi, bi, C, inner](std::span<const double> g) {
      if (xi->requires_grad) {
        auto buf = grad_buffer(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
      }
      if (bi->requires_grad) {
        auto buf = grad_buffer(*bi);
        for (std::size_t c = 0; c < C; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < inner; ++i) s += g[c * inner + i];
          buf[c] += s;
        }
      }
    };
  }
  return make_result("bias", x.shape(), std::move(out), {x, b}, std::move(fn));
}

Tensor detach(const Tensor& x) { return x.detach(); }

}  // namespace irisgrad
