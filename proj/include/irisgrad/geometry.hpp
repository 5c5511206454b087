#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "irisgrad/tensor.hpp"

namespace irisgrad {

// Raised when a mask holds too little iris to measure anything.
class DegenerateSegmentation : public std::runtime_error {
 public:
  explicit DegenerateSegmentation(const std::string& what)
      : std::runtime_error("degenerate segmentation: " + what) {}
};

// Masks with total occupancy at or below this many pixels are degenerate.
inline constexpr double kMinMaskOccupancy = 10.0;

// Intensity band of the soft iris mask: m = s((x - low)/t) * s((high - x)/t).
struct MaskBand {
  double low = 0.25;
  double high = 0.75;
  double temperature = 0.015;
};

// Per-pixel iris probability of image[H x W].
Tensor soft_mask(const Tensor& image, const MaskBand& band = {});
// Per-pixel probability of belonging to the dark (pupil) region.
Tensor dark_occupancy(const Tensor& image, const MaskBand& band = {});
// Binary copy of a soft mask thresholded at 0.5.
Tensor binarize(const Tensor& mask);

struct CircleValues {
  double center_x = 0.0;
  double center_y = 0.0;
  double pupil_radius = 0.0;
  double iris_radius = 0.0;
};

// Concentric pupil/iris circles as differentiable 0-d tensors.
struct CircleParams {
  Tensor center_x;
  Tensor center_y;
  Tensor pupil_radius;
  Tensor iris_radius;

  CircleValues value() const;
  static CircleParams constant(const CircleValues& v);
};

struct CircleEstimator {
  // Half-height of the horizontal scan band at 480 rows; scaled with the
  // image height, never below 2 rows.
  double band_half_rows_at_480 = 10.0;
  MaskBand band{};
};

// Scanline estimate: the centre is the centroid of dark occupancy, the
// radii come from mean chord half-widths in a horizontal band through the
// centre (with a curvature correction for the band's vertical extent).
CircleParams estimate_circles(const Tensor& image, const Tensor& mask, const CircleEstimator& cfg = {});

// Soft vertical extent of the mask: sum over rows of tanh(beta * row sum).
Tensor eyelid_opening(const Tensor& mask, double beta = 0.1);

struct PolarIris {
  // [rows x cols], radial rows from the pupil boundary outward.
  Tensor values;
  // Fraction of samples whose source point fell outside the image.
  double clamped_fraction = 0.0;
};

inline constexpr std::size_t kPolarRows = 64;
inline constexpr std::size_t kPolarCols = 512;

// Rubber-sheet sampling of the annulus between the two circles.
PolarIris normalize(const Tensor& image, const CircleParams& circles, std::size_t rows = kPolarRows,
                    std::size_t cols = kPolarCols);

}  // namespace irisgrad
