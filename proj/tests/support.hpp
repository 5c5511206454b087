#pragma once

// Shared helpers for the unit and acceptance tests: seeded tensors, naive
// reference implementations, and the per-op gradient-check table.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "irisgrad/gradcheck.hpp"
#include "irisgrad/kernels.hpp"
#include "irisgrad/ops.hpp"
#include "irisgrad/tensor.hpp"

namespace support {

using namespace irisgrad;

inline std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), uniform(n, seed, lo, hi));
}

// Values bounded away from zero (for ops with a kink or pole at 0).
inline Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  auto t = random_tensor(std::move(shape), seed, 0.2, 1.5);
  std::mt19937_64 rng(seed ^ 0x5555);
  std::vector<double> v(t.values().begin(), t.values().end());
  for (auto& x : v)
    if (rng() & 1) x = -x;
  return Tensor(t.shape(), v);
}

// sum(w * f) with fixed weights turns any tensor into a scalar with a
// non-trivial gradient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  return sum(y * random_tensor(y.shape(), seed, 0.5, 1.5));
}

inline long reflect(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Straight-from-the-definition cross-correlation of x[C,H,W] with
// k[F,C,kh,kw].
inline std::vector<double> naive_conv(const std::vector<double>& x, std::size_t C, std::size_t H, std::size_t W,
                                      const std::vector<double>& k, std::size_t F, std::size_t kh, std::size_t kw,
                                      std::size_t stride, std::size_t ph, std::size_t pw, bool reflect_pad) {
  const std::size_t oh = (H + 2 * ph - kh) / stride + 1, ow = (W + 2 * pw - kw) / stride + 1;
  std::vector<double> y(F * oh * ow, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              long r = static_cast<long>(i * stride + a) - static_cast<long>(ph);
              long q = static_cast<long>(j * stride + b) - static_cast<long>(pw);
              if (reflect_pad) {
                r = reflect(r, static_cast<long>(H));
                q = reflect(q, static_cast<long>(W));
              } else if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) {
                continue;
              }
              acc += x[(c * H + static_cast<std::size_t>(r)) * W + static_cast<std::size_t>(q)] *
                     k[((f * C + c) * kh + a) * kw + b];
            }
        y[(f * oh + i) * ow + j] = acc;
      }
  return y;
}

struct OpCase {
  std::string name;
  ScalarFunction f;
  Tensor x;
  double tolerance;
};

inline constexpr double kSmoothTolerance = 1e-6;
inline constexpr double kOpTolerance = 1e-4;

// One gradient check per differentiable op (and per input of binary ops).
inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  const Shape s{3, 4};
  auto unary_case = [&](const std::string& name, UnaryOp op, Tensor x, double tol) {
    c.push_back({name, [op](const Tensor& t) { return weighted_sum(unary(op, t)); }, std::move(x), tol});
  };
  unary_case("neg", UnaryOp::neg, random_tensor(s, 1), kSmoothTolerance);
  unary_case("exp", UnaryOp::exp, random_tensor(s, 2), kSmoothTolerance);
  unary_case("log", UnaryOp::log, random_tensor(s, 3, 0.3, 2.0), kSmoothTolerance);
  unary_case("sqrt", UnaryOp::sqrt, random_tensor(s, 4, 0.3, 2.0), kSmoothTolerance);
  unary_case("abs", UnaryOp::abs, away_from_zero(s, 5), kSmoothTolerance);
  unary_case("sigmoid", UnaryOp::sigmoid, random_tensor(s, 6, -3, 3), kSmoothTolerance);
  unary_case("tanh", UnaryOp::tanh, random_tensor(s, 7, -2, 2), kSmoothTolerance);
  unary_case("relu", UnaryOp::relu, away_from_zero(s, 8), kSmoothTolerance);
  unary_case("square", UnaryOp::square, random_tensor(s, 9), kSmoothTolerance);
  unary_case("sin", UnaryOp::sin, random_tensor(s, 10, -3, 3), kSmoothTolerance);
  unary_case("cos", UnaryOp::cos, random_tensor(s, 11, -3, 3), kSmoothTolerance);
  unary_case("softplus", UnaryOp::softplus, random_tensor(s, 12, -3, 3), kSmoothTolerance);

  // Binary ops: x packs both operands; each side is checked.
  auto binary_case = [&](const std::string& name, BinaryOp op, double lo, double hi) {
    Tensor x = random_tensor({2, 3, 4}, 20 + static_cast<int>(op), lo, hi);
    c.push_back({name, [op](const Tensor& t) {
                   Tensor a = reshape(slice(t, 0, 0, 1), {3, 4});
                   Tensor b = reshape(slice(t, 0, 1, 1), {3, 4});
                   return weighted_sum(elementwise(op, a, b));
                 },
                 x, kSmoothTolerance});
  };
  binary_case("add", BinaryOp::add, -1, 1);
  binary_case("sub", BinaryOp::sub, -1, 1);
  binary_case("mul", BinaryOp::mul, -1, 1);
  binary_case("div", BinaryOp::div, 0.5, 2);
  binary_case("pow", BinaryOp::pow, 0.5, 2);
  c.push_back({"scalar-broadcast", [](const Tensor& t) {
                 Tensor a = slice(t, 0, 0, 1);
                 Tensor b = slice(t, 0, 1, 5);
                 return weighted_sum(a * b + b / (a + 3.0));
               },
               random_tensor({6}, 30), kSmoothTolerance});
  c.push_back({"atan2", [](const Tensor& t) {
                 return weighted_sum(atan2(slice(t, 0, 0, 4), slice(t, 0, 4, 4)));
               },
               away_from_zero({8}, 31), kSmoothTolerance});
  c.push_back({"clamp", [](const Tensor& t) { return weighted_sum(clamp(t, -0.5, 0.5)); },
               Tensor({6}, {-0.9, -0.3, 0.1, 0.4, 0.7, 1.2}), kSmoothTolerance});

  c.push_back({"matmul", [](const Tensor& t) {
                 Tensor a = reshape(slice(t, 0, 0, 6), {2, 3});
                 Tensor b = reshape(slice(t, 0, 6, 12), {3, 4});
                 return weighted_sum(matmul(a, b));
               },
               random_tensor({18}, 32), kOpTolerance});

  // conv2d w.r.t. input and kernel, zero and reflect padding, stride 2.
  for (auto pad : {Padding::zero, Padding::reflect})
    for (std::size_t stride : {1, 2}) {
      const std::string tag = std::string(pad == Padding::zero ? "zero" : "reflect") + "/s" + std::to_string(stride);
      Tensor k = random_tensor({2, 2, 3, 3}, 33);
      Tensor x = random_tensor({2, 5, 6}, 34);
      Conv2dOptions o;
      o.padding = pad;
      o.stride = stride;
      c.push_back({"conv2d-input/" + tag, [k, o](const Tensor& t) { return weighted_sum(conv2d(t, k, o)); }, x,
                   kOpTolerance});
      c.push_back({"conv2d-kernel/" + tag, [x, o](const Tensor& t) { return weighted_sum(conv2d(x, t, o)); }, k,
                   kOpTolerance});
    }

  c.push_back({"reduce-sum-axis", [](const Tensor& t) { return weighted_sum(reduce(ReduceOp::sum, t, {1})); },
               random_tensor({3, 4, 2}, 35), kOpTolerance});
  c.push_back({"reduce-mean-axes", [](const Tensor& t) { return weighted_sum(reduce(ReduceOp::mean, t, {0, 2})); },
               random_tensor({3, 4, 2}, 36), kOpTolerance});
  c.push_back({"reduce-max-smooth", [](const Tensor& t) {
                 return weighted_sum(reduce(ReduceOp::max_smooth, t, {1}, 0.3));
               },
               random_tensor({3, 4}, 37), kOpTolerance});

  // Bilinear sampling: gradient to the source and to the coordinates
  // (coordinates kept off integer grid lines where the slope jumps).
  Tensor src = random_tensor({5, 6}, 38);
  Tensor coords({4, 2}, {0.3, 0.7, 2.4, 1.2, 4.6, 3.3, 1.5, 2.8});
  c.push_back({"grid_sample-source", [coords](const Tensor& t) { return weighted_sum(grid_sample(t, coords)); }, src,
               kOpTolerance});
  c.push_back({"grid_sample-coords", [src](const Tensor& t) { return weighted_sum(grid_sample(src, t)); }, coords,
               kOpTolerance});

  c.push_back({"reshape", [](const Tensor& t) { return weighted_sum(square(reshape(t, {4, 3}))); },
               random_tensor(s, 39), kOpTolerance});
  c.push_back({"slice", [](const Tensor& t) { return weighted_sum(square(slice(t, 1, 1, 2))); }, random_tensor(s, 40),
               kOpTolerance});
  c.push_back({"concat", [](const Tensor& t) {
                 return weighted_sum(square(concat({slice(t, 0, 2, 1), t, slice(t, 0, 0, 1)}, 0)));
               },
               random_tensor(s, 41), kOpTolerance});
  c.push_back({"stack_last", [](const Tensor& t) {
                 return weighted_sum(square(stack_last({slice(t, 0, 0, 1), slice(t, 0, 2, 1)})));
               },
               random_tensor(s, 42), kOpTolerance});
  c.push_back({"select", [](const Tensor& t) { return square(select(t, 5)) * 3.0 + select(t, 2); },
               random_tensor(s, 43), kOpTolerance});
  c.push_back({"upsample_nearest2x", [](const Tensor& t) { return weighted_sum(square(upsample_nearest2x(t))); },
               random_tensor({2, 2, 3}, 44), kOpTolerance});
  c.push_back({"add_channel_bias", [](const Tensor& t) {
                 Tensor x = reshape(slice(t, 0, 0, 12), {2, 2, 3});
                 Tensor b = slice(t, 0, 12, 2);
                 return weighted_sum(square(add_channel_bias(x, b)));
               },
               random_tensor({14}, 45), kOpTolerance});
  return c;
}

}  // namespace support
