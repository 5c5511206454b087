#include "irisgrad/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "irisgrad/ops.hpp"

namespace irisgrad {

namespace {

void require_image(const Tensor& t, const char* what) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(what) + " must be [H x W], got " + shape_string(t.shape()));
  }
}

double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

}  // namespace

Tensor soft_mask(const Tensor& image, const MaskBand& band) {
  require_image(image, "image");
  const double inv = 1.0 / band.temperature;
  return sigmoid((image - band.low) * inv) * sigmoid((band.high - image) * inv);
}

Tensor dark_occupancy(const Tensor& image, const MaskBand& band) {
  require_image(image, "image");
  return sigmoid((band.low - image) * (1.0 / band.temperature));
}

Tensor binarize(const Tensor& mask) {
  std::vector<double> v(mask.values().begin(), mask.values().end());
  for (auto& x : v) x = x >= 0.5 ? 1.0 : 0.0;
  return Tensor(mask.shape(), std::move(v));
}

CircleValues CircleParams::value() const {
  return {center_x.item(), center_y.item(), pupil_radius.item(), iris_radius.item()};
}

CircleParams CircleParams::constant(const CircleValues& v) {
  return {Tensor::scalar(v.center_x), Tensor::scalar(v.center_y), Tensor::scalar(v.pupil_radius),
          Tensor::scalar(v.iris_radius)};
}

CircleParams estimate_circles(const Tensor& image, const Tensor& mask, const CircleEstimator& cfg) {
  require_image(image, "image");
  if (mask.shape() != image.shape()) {
    throw std::invalid_argument("mask shape " + shape_string(mask.shape()) + " differs from image " +
                                shape_string(image.shape()));
  }
  if (total(mask) <= kMinMaskOccupancy) throw DegenerateSegmentation("iris mask is empty");
  const std::size_t H = image.dim(0), W = image.dim(1);

  Tensor dark = dark_occupancy(image, cfg.band);
  const double dark_total = total(dark);
  if (dark_total <= 1.0) throw DegenerateSegmentation("no pupil region found");

  std::vector<double> xs(H * W), ys(H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      xs[i * W + j] = static_cast<double>(j);
      ys[i * W + j] = static_cast<double>(i);
    }
  Tensor dark_sum = sum(dark);
  CircleParams c;
  c.center_x = sum(dark * Tensor({H, W}, std::move(xs))) / dark_sum;
  c.center_y = sum(dark * Tensor({H, W}, std::move(ys))) / dark_sum;

  const auto half = static_cast<std::size_t>(
      std::max(2.0, std::round(cfg.band_half_rows_at_480 * static_cast<double>(H) / 480.0)));
  const std::size_t rows = 2 * half + 1;
  if (rows > H) throw std::invalid_argument("image too short for the scan band");
  const long centre = std::lround(c.center_y.item());
  const auto first = static_cast<std::size_t>(
      std::clamp<long>(centre - static_cast<long>(half), 0, static_cast<long>(H - rows)));

  // Mean squared vertical offset of the band rows from the centre.
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < rows; ++k) {
    const double y = static_cast<double>(first + k);
    s1 += y;
    s2 += y * y;
  }
  const double n = static_cast<double>(rows);
  Tensor offset_sq = (s2 - 2.0 * s1 * c.center_y + n * square(c.center_y)) / n;

  Tensor dark_band = slice(dark, 0, first, rows);
  Tensor mask_band = slice(mask, 0, first, rows);
  Tensor pupil_half = sum(dark_band) / (2.0 * n);
  Tensor iris_half = (sum(dark_band) + sum(mask_band)) / (2.0 * n);
  c.pupil_radius = sqrt(square(pupil_half) + offset_sq);
  c.iris_radius = sqrt(square(iris_half) + offset_sq);
  return c;
}

Tensor eyelid_opening(const Tensor& mask, double beta) {
  require_image(mask, "mask");
  if (total(mask) <= kMinMaskOccupancy) throw DegenerateSegmentation("iris mask is empty");
  return sum(tanh(reduce(ReduceOp::sum, mask, {1}) * beta));
}

PolarIris normalize(const Tensor& image, const CircleParams& circles, std::size_t rows, std::size_t cols) {
  require_image(image, "image");
  std::vector<double> rho(rows * cols), cosv(rows * cols), sinv(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double r = (static_cast<double>(i) + 0.5) / static_cast<double>(rows);
    for (std::size_t j = 0; j < cols; ++j) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(cols);
      rho[i * cols + j] = r;
      cosv[i * cols + j] = std::cos(theta);
      sinv[i * cols + j] = std::sin(theta);
    }
  }
  Tensor radius = Tensor({rows, cols}, std::move(rho)) * (circles.iris_radius - circles.pupil_radius) +
                  circles.pupil_radius;
  Tensor px = radius * Tensor({rows, cols}, std::move(cosv)) + circles.center_x;
  Tensor py = radius * Tensor({rows, cols}, std::move(sinv)) + circles.center_y;

  PolarIris out;
  const double maxx = static_cast<double>(image.dim(1) - 1), maxy = static_cast<double>(image.dim(0) - 1);
  std::size_t clamped = 0;
  for (std::size_t k = 0; k < px.size(); ++k) {
    const double x = px.values()[k], y = py.values()[k];
    if (x < 0.0 || x > maxx || y < 0.0 || y > maxy) ++clamped;
  }
  out.clamped_fraction = static_cast<double>(clamped) / static_cast<double>(px.size());
  out.values = grid_sample(image, stack_last({px, py}));
  return out;
}

}  // namespace irisgrad
