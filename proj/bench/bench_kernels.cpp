// Serial reference vs OpenMP kernels: wall time, speedup and a bitwise
// comparison of the outputs.
//
//   bench_kernels [--threads N] [--repeats R]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "CLI11.hpp"
#include "irisgrad/kernels.hpp"

namespace k = irisgrad::kernels;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double best_of(int repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const char* name, int repeats, std::vector<double>& a, std::vector<double>& b,
            const std::function<void(std::vector<double>&)>& serial,
            const std::function<void(std::vector<double>&)>& parallel) {
  const double ts = best_of(repeats, [&] {
    std::fill(a.begin(), a.end(), 0.0);
    serial(a);
  });
  const double tp = best_of(repeats, [&] {
    std::fill(b.begin(), b.end(), 0.0);
    parallel(b);
  });
  const bool same = std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  std::printf("%-24s %10.3f %10.3f %8.2fx  %s\n", name, ts, tp, ts / tp, same ? "identical" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs parallel kernel benchmark"};
  int threads = omp_get_max_threads();
  int repeats = 5;
  app.add_option("--threads", threads, "OpenMP threads for the parallel kernels");
  app.add_option("--repeats", repeats, "timed repetitions (best is reported)");
  CLI11_PARSE(app, argc, argv);
  omp_set_num_threads(threads);
  std::printf("threads %d, best of %d, times in ms\n", threads, repeats);
  std::printf("%-24s %10s %10s %9s  %s\n", "kernel", "serial", "parallel", "speedup", "outputs");

  // 3x3 reflect-padded conv over a 640x480 eight-channel map.
  k::Conv2dGeometry g{8, 480, 640, 8, 3, 3, 1, 1, 1, k::Padding::reflect};
  const auto x = noise(g.channels * g.height * g.width, 1);
  const auto kern = noise(g.filters * g.channels * 9, 2);
  const auto dy = noise(g.filters * g.out_h() * g.out_w(), 3);
  std::vector<double> ya(dy.size()), yb(dy.size());
  report("conv2d forward", repeats, ya, yb, [&](auto& y) { k::serial::conv2d_forward(g, x, kern, y); },
         [&](auto& y) { k::parallel::conv2d_forward(g, x, kern, y); });
  std::vector<double> dxa(x.size()), dxb(x.size());
  report("conv2d backward input", repeats, dxa, dxb,
         [&](auto& d) { k::serial::conv2d_backward_input(g, kern, dy, d); },
         [&](auto& d) { k::parallel::conv2d_backward_input(g, kern, dy, d); });
  std::vector<double> dka(kern.size()), dkb(kern.size());
  report("conv2d backward kernel", repeats, dka, dkb,
         [&](auto& d) { k::serial::conv2d_backward_kernel(g, x, dy, d); },
         [&](auto& d) { k::parallel::conv2d_backward_kernel(g, x, dy, d); });

  const std::size_t m = 256, kk = 256, n = 256;
  const auto a = noise(m * kk, 4), b = noise(kk * n, 5);
  std::vector<double> ca(m * n), cb(m * n);
  report("matmul 256^3", repeats, ca, cb, [&](auto& c) { k::serial::matmul(m, kk, n, a, b, c); },
         [&](auto& c) { k::parallel::matmul(m, kk, n, a, b, c); });

  // Rubber-sheet sized sampling: 64x512 points from a 640x480 image.
  k::GridGeometry gg{480, 640, 64 * 512};
  const auto src = noise(gg.src_h * gg.src_w, 6);
  std::vector<double> coords(2 * gg.samples);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(0.0, 639.0), uy(0.0, 479.0);
  for (std::size_t i = 0; i < gg.samples; ++i) coords[2 * i] = ux(rng), coords[2 * i + 1] = uy(rng);
  std::vector<double> sa(gg.samples), sb(gg.samples);
  report("grid_sample 64x512", repeats, sa, sb, [&](auto& o) { k::serial::grid_sample(gg, src, coords, o); },
         [&](auto& o) { k::parallel::grid_sample(gg, src, coords, o); });
  return 0;
}
