#pragma once

// Dense numeric kernels behind the differentiable ops. Every kernel exists
// twice: `serial` is the reference, `parallel` splits the outermost
// independent loop across OpenMP threads. Each output element is produced
// by exactly one thread in the same summation order as the serial code, so
// the two variants agree bit-for-bit at any thread count.

#include <cstddef>
#include <span>

namespace irisgrad::kernels {

enum class Padding { zero, reflect };

struct Conv2dGeometry {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t filters = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  Padding padding = Padding::zero;

  std::size_t out_h() const { return (height + 2 * pad_h - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad_w - kernel_w) / stride + 1; }
};

// Source index for padded coordinate `i` (may be negative), or -1 when the
// tap falls on zero padding.
long padded_index(long i, long n, Padding mode);

struct GridGeometry {
  std::size_t src_h = 0;
  std::size_t src_w = 0;
  std::size_t samples = 0;
};

namespace serial {
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x,
                    std::span<const double> k, std::span<double> y);
// Accumulates into dx.
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> k,
                           std::span<const double> dy, std::span<double> dx);
// Accumulates into dk.
void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dk);
// c[m x n] = a[m x k] * b[k x n]
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);
// coords holds (x, y) pairs in pixel units, clamped to the border.
void grid_sample(const GridGeometry& g, std::span<const double> src,
                 std::span<const double> coords, std::span<double> out);
}  // namespace serial

namespace parallel {
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x,
                    std::span<const double> k, std::span<double> y);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> k,
                           std::span<const double> dy, std::span<double> dx);
void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dk);
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);
void grid_sample(const GridGeometry& g, std::span<const double> src,
                 std::span<const double> coords, std::span<double> out);
}  // namespace parallel

}  // namespace irisgrad::kernels
