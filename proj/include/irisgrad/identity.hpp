#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "irisgrad/geometry.hpp"
#include "irisgrad/tensor.hpp"

namespace irisgrad {

// Direction of the carrier wave on the polar image: angular runs along the
// columns (theta), radial along the rows (rho).
enum class GaborOrientation { angular, radial };

struct GaborSpec {
  double wavelength;  // polar pixels per carrier cycle
  double sigma;       // Gaussian envelope, polar pixels
  GaborOrientation orientation;
  // Sine (odd) carrier instead of cosine.
  bool odd = false;
};

// Gabor kernels with an axis-aligned carrier are rank one, so each filter is
// stored as a row factor [1 x size] and a column factor [size x 1]. The
// carrier factor is shifted to zero mean, which makes the whole kernel DC-free.
class GaborBank {
 public:
  explicit GaborBank(std::vector<GaborSpec> specs, std::size_t size = 15);

  // 3 wavelengths x 2 orientations, cosine carriers. Used by the loss.
  static GaborBank loss_bank();
  // 2 wavelengths, angular carriers in cosine/sine pairs (phase quadrants).
  // Used only for scoring. Radial carriers are left out because every
  // normalized iris shares the dark-to-bright ramp along rho.
  static GaborBank evaluation_bank();

  std::size_t filters() const { return specs_.size(); }
  std::size_t kernel_size() const { return size_; }
  const std::vector<GaborSpec>& specs() const { return specs_; }
  // Identical for banks built from the same parameters.
  const std::string& fingerprint() const { return fingerprint_; }
  // Dense [size x size] kernel of filter i (for inspection and tests).
  std::vector<double> dense_kernel(std::size_t i) const;

  // polar[rows x cols] -> responses[filters x rows x cols], reflect padding.
  Tensor respond(const Tensor& polar) const;

 private:
  std::vector<GaborSpec> specs_;
  std::size_t size_;
  std::vector<Tensor> row_factors_;
  std::vector<Tensor> col_factors_;
  std::string fingerprint_;
};

struct IdentityFeatures {
  Tensor responses;  // [filters x 64 x 512]
  std::string bank;  // fingerprint of the producing bank
};

// Features are computed on 8-bit intensities so that the identity loss is on
// the same footing as the pixel-valued geometry losses under equal weights.
inline constexpr double kIdentityIntensityScale = 255.0;

// normalize(x, c) scaled to 0..255, followed by the bank.
IdentityFeatures phi_id(const Tensor& image, const CircleParams& circles, const GaborBank& bank);
// Mean absolute difference of the two response stacks.
Tensor loss_identity(const IdentityFeatures& features, const IdentityFeatures& reference);

// Polar rows/cols next to the border whose responses see padding.
inline constexpr std::size_t kCodeBorder = 7;

struct IrisCode {
  std::size_t filters = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  // One byte per bit, layout [filter][row][col].
  std::vector<std::uint8_t> bits;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return filters * rows * cols; }
};

IrisCode iris_code(const Tensor& image, const CircleParams& circles, const GaborBank& bank);
IrisCode iris_code(const Tensor& responses);

// Fractional Hamming distance minimized over circular column shifts in
// [-max_shift, max_shift].
double hamming(const IrisCode& a, const IrisCode& b, std::size_t max_shift = 16);

// 8-byte header (u16 rows, cols, filters, version; little endian), then the
// code bits and the validity bits, each packed LSB-first.
std::vector<std::uint8_t> encode_iris_code(const IrisCode& code);
IrisCode decode_iris_code(const std::vector<std::uint8_t>& bytes);
void write_iris_code(const IrisCode& code, const std::filesystem::path& path);
IrisCode read_iris_code(const std::filesystem::path& path);

// Mean squared evaluation-bank response over the valid polar region of the
// normalized iris.
double texture_energy(const Tensor& image, const CircleParams& circles, const GaborBank& bank);

}  // namespace irisgrad
