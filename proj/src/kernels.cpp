#include "irisgrad/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace irisgrad::kernels {

long padded_index(long i, long n, Padding mode) {
  if (i >= 0 && i < n) return i;
  if (mode == Padding::zero) return -1;
  if (n == 1) return 0;
  // Reflection without repeating the edge sample: -1 -> 1, n -> n - 2.
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

namespace {

// One output row (filter f, output row oy) of the forward correlation.
inline void conv_forward_row(const Conv2dGeometry& g, std::span<const double> x,
                             std::span<const double> k, std::span<double> y, std::size_t f,
                             std::size_t oy) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t OW = g.out_w();
  const std::size_t plane = g.height * g.width;
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  double* out = y.data() + (f * g.out_h() + oy) * OW;
  for (std::size_t ox = 0; ox < OW; ++ox) {
    double acc = 0.0;
    for (std::size_t c = 0; c < g.channels; ++c) {
      const double* xc = x.data() + c * plane;
      const double* kc = k.data() + (f * g.channels + c) * kplane;
      for (std::size_t a = 0; a < g.kernel_h; ++a) {
        const long iy = padded_index(static_cast<long>(oy * g.stride + a) - static_cast<long>(g.pad_h), H,
                                     g.padding);
        if (iy < 0) continue;
        const double* xrow = xc + iy * W;
        const double* krow = kc + a * g.kernel_w;
        for (std::size_t b = 0; b < g.kernel_w; ++b) {
          const long ix = padded_index(static_cast<long>(ox * g.stride + b) - static_cast<long>(g.pad_w),
                                       W, g.padding);
          if (ix < 0) continue;
          acc += xrow[ix] * krow[b];
        }
      }
    }
    out[ox] = acc;
  }
}

// Scatter of all output gradients into input channel c.
inline void conv_backward_input_channel(const Conv2dGeometry& g, std::span<const double> k,
                                        std::span<const double> dy, std::span<double> dx,
                                        std::size_t c) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t OH = g.out_h(), OW = g.out_w();
  const std::size_t kplane = g.kernel_h * g.kernel_w;
  double* dxc = dx.data() + c * g.height * g.width;
  for (std::size_t f = 0; f < g.filters; ++f) {
    const double* kc = k.data() + (f * g.channels + c) * kplane;
    const double* dyf = dy.data() + f * OH * OW;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double d = dyf[oy * OW + ox];
        if (d == 0.0) continue;
        for (std::size_t a = 0; a < g.kernel_h; ++a) {
          const long iy = padded_index(static_cast<long>(oy * g.stride + a) - static_cast<long>(g.pad_h),
                                       H, g.padding);
          if (iy < 0) continue;
          for (std::size_t b = 0; b < g.kernel_w; ++b) {
            const long ix = padded_index(
                static_cast<long>(ox * g.stride + b) - static_cast<long>(g.pad_w), W, g.padding);
            if (ix < 0) continue;
            dxc[iy * W + ix] += d * kc[a * g.kernel_w + b];
          }
        }
      }
    }
  }
}

// Gradient of one kernel tap, flat index t over (f, c, a, b).
inline void conv_backward_kernel_tap(const Conv2dGeometry& g, std::span<const double> x,
                                     std::span<const double> dy, std::span<double> dk,
                                     std::size_t t) {
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  const std::size_t OH = g.out_h(), OW = g.out_w();
  const std::size_t b = t % g.kernel_w;
  const std::size_t a = (t / g.kernel_w) % g.kernel_h;
  const std::size_t c = (t / (g.kernel_w * g.kernel_h)) % g.channels;
  const std::size_t f = t / (g.kernel_w * g.kernel_h * g.channels);
  const double* xc = x.data() + c * g.height * g.width;
  const double* dyf = dy.data() + f * OH * OW;
  double acc = 0.0;
  for (std::size_t oy = 0; oy < OH; ++oy) {
    const long iy = padded_index(static_cast<long>(oy * g.stride + a) - static_cast<long>(g.pad_h), H,
                                 g.padding);
    if (iy < 0) continue;
    for (std::size_t ox = 0; ox < OW; ++ox) {
      const long ix = padded_index(static_cast<long>(ox * g.stride + b) - static_cast<long>(g.pad_w), W,
                                   g.padding);
      if (ix < 0) continue;
      acc += xc[iy * W + ix] * dyf[oy * OW + ox];
    }
  }
  dk[t] += acc;
}

inline void matmul_row(std::size_t k, std::size_t n, std::span<const double> a,
                       std::span<const double> b, std::span<double> c, std::size_t i) {
  double* crow = c.data() + i * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a.data() + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline double bilinear(const GridGeometry& g, std::span<const double> src, double x, double y) {
  const double maxx = static_cast<double>(g.src_w - 1), maxy = static_cast<double>(g.src_h - 1);
  x = std::clamp(x, 0.0, maxx);
  y = std::clamp(y, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, g.src_w - 1);
  const std::size_t y1 = std::min(y0 + 1, g.src_h - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double* r0 = src.data() + y0 * g.src_w;
  const double* r1 = src.data() + y1 * g.src_w;
  return (1.0 - fy) * ((1.0 - fx) * r0[x0] + fx * r0[x1]) + fy * ((1.0 - fx) * r1[x0] + fx * r1[x1]);
}

}  // namespace

namespace serial {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x, std::span<const double> k,
                    std::span<double> y) {
  for (std::size_t f = 0; f < g.filters; ++f)
    for (std::size_t oy = 0; oy < g.out_h(); ++oy) conv_forward_row(g, x, k, y, f, oy);
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> k,
                           std::span<const double> dy, std::span<double> dx) {
  for (std::size_t c = 0; c < g.channels; ++c) conv_backward_input_channel(g, k, dy, dx, c);
}

void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dk) {
  const std::size_t taps = g.filters * g.channels * g.kernel_h * g.kernel_w;
  for (std::size_t t = 0; t < taps; ++t) conv_backward_kernel_tap(g, x, dy, dk, t);
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(k, n, a, b, c, i);
}

void grid_sample(const GridGeometry& g, std::span<const double> src, std::span<const double> coords,
                 std::span<double> out) {
  for (std::size_t s = 0; s < g.samples; ++s)
    out[s] = bilinear(g, src, coords[2 * s], coords[2 * s + 1]);
}

}  // namespace serial

namespace parallel {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x, std::span<const double> k,
                    std::span<double> y) {
  const long rows = static_cast<long>(g.filters * g.out_h());
  const std::size_t OH = g.out_h();
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r)
    conv_forward_row(g, x, k, y, static_cast<std::size_t>(r) / OH, static_cast<std::size_t>(r) % OH);
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> k,
                           std::span<const double> dy, std::span<double> dx) {
  const long channels = static_cast<long>(g.channels);
#pragma omp parallel for schedule(static)
  for (long c = 0; c < channels; ++c)
    conv_backward_input_channel(g, k, dy, dx, static_cast<std::size_t>(c));
}

void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dk) {
  const long taps = static_cast<long>(g.filters * g.channels * g.kernel_h * g.kernel_w);
#pragma omp parallel for schedule(static)
  for (long t = 0; t < taps; ++t) conv_backward_kernel_tap(g, x, dy, dk, static_cast<std::size_t>(t));
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(m); ++i) matmul_row(k, n, a, b, c, static_cast<std::size_t>(i));
}

void grid_sample(const GridGeometry& g, std::span<const double> src, std::span<const double> coords,
                 std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (long s = 0; s < static_cast<long>(g.samples); ++s)
    out[s] = bilinear(g, src, coords[2 * s], coords[2 * s + 1]);
}

}  // namespace parallel

}  // namespace irisgrad::kernels
