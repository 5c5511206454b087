#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "irisgrad/kernels.hpp"
#include "irisgrad/tensor.hpp"

namespace irisgrad {

enum class BinaryOp { add, sub, mul, div, pow };
enum class UnaryOp { neg, exp, log, sqrt, abs, sigmoid, tanh, relu, square, sin, cos, softplus };
enum class ReduceOp { sum, mean, max_smooth };

using kernels::Padding;

// Shapes must match, or one side must hold a single element (scalar
// broadcast). No other broadcasting is supported.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryOp op, const Tensor& a, double b);
Tensor elementwise(BinaryOp op, double a, const Tensor& b);

// abs and relu use derivative 0 at the kink.
Tensor unary(UnaryOp op, const Tensor& a);

// Elementwise atan2(y, x); gradient at the origin is taken as 0.
Tensor atan2(const Tensor& y, const Tensor& x);
// Values outside [lo, hi] are clipped and receive zero gradient.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::zero;
  // Defaults to half the kernel size ("same" output for stride 1).
  std::optional<std::size_t> pad_h;
  std::optional<std::size_t> pad_w;
};

// Cross-correlation of x[C x H x W] with k[F x C x kh x kw]; kh and kw odd.
Tensor conv2d(const Tensor& x, const Tensor& k, const Conv2dOptions& options = {});

// Reduces over `axes` (all axes when empty); reduced axes are removed.
// max_smooth is temperature * log(sum(exp(x / temperature))).
Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<std::size_t>& axes = {},
              double temperature = 1.0);

// Bilinear sampling of x[H x W] at coords[... x 2] holding (column, row)
// pairs in pixel units; out-of-range coordinates clamp to the border.
Tensor grid_sample(const Tensor& x, const Tensor& coords);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Stacks equally shaped tensors along a new trailing axis.
Tensor stack_last(const std::vector<Tensor>& parts);
// Single element at flat index as a 0-d tensor.
Tensor select(const Tensor& x, std::size_t index);
// x[C x H x W] -> [C x 2H x 2W]
Tensor upsample_nearest2x(const Tensor& x);
// Adds b[C] to every element of channel c of x[C x ...].
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
Tensor detach(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor operator+(const Tensor& a, double b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, double b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, double b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor operator/(const Tensor& a, double b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor operator+(double a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(double a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor operator*(double a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor operator/(double a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor operator-(const Tensor& a) { return unary(UnaryOp::neg, a); }

inline Tensor pow(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::pow, a, b); }
inline Tensor pow(const Tensor& a, double b) { return elementwise(BinaryOp::pow, a, b); }
inline Tensor exp(const Tensor& a) { return unary(UnaryOp::exp, a); }
inline Tensor log(const Tensor& a) { return unary(UnaryOp::log, a); }
inline Tensor sqrt(const Tensor& a) { return unary(UnaryOp::sqrt, a); }
inline Tensor abs(const Tensor& a) { return unary(UnaryOp::abs, a); }
inline Tensor sigmoid(const Tensor& a) { return unary(UnaryOp::sigmoid, a); }
inline Tensor tanh(const Tensor& a) { return unary(UnaryOp::tanh, a); }
inline Tensor relu(const Tensor& a) { return unary(UnaryOp::relu, a); }
inline Tensor square(const Tensor& a) { return unary(UnaryOp::square, a); }
inline Tensor sin(const Tensor& a) { return unary(UnaryOp::sin, a); }
inline Tensor cos(const Tensor& a) { return unary(UnaryOp::cos, a); }
inline Tensor softplus(const Tensor& a) { return unary(UnaryOp::softplus, a); }
inline Tensor sum(const Tensor& x) { return reduce(ReduceOp::sum, x); }
inline Tensor mean(const Tensor& x) { return reduce(ReduceOp::mean, x); }

}  // namespace irisgrad
