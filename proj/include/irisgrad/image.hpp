#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "irisgrad/tensor.hpp"

namespace irisgrad {

struct ImageSize {
  std::size_t width = 160;
  std::size_t height = 120;

  bool operator==(const ImageSize&) const = default;
};

// Parses "WxH", e.g. "640x480".
ImageSize parse_resolution(const std::string& text);

// Grayscale image with pixels in [0, 1], row-major.
struct IrisImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static IrisImage from_tensor(const Tensor& t);
  Tensor tensor() const;
  bool operator==(const IrisImage&) const = default;
};

enum class ImageFormat { pgm, png };

// Infers the format from the extension (.pgm or .png).
ImageFormat format_for(const std::filesystem::path& path);

// Pixel p is stored as round(255 * clamp(p, 0, 1)).
void write_image(const IrisImage& image, const std::filesystem::path& path, ImageFormat format);
void write_image(const IrisImage& image, const std::filesystem::path& path);
IrisImage read_image(const std::filesystem::path& path);

// 8-bit bodies as written to disk; exposed for byte-level checks.
std::vector<unsigned char> quantize(const IrisImage& image);
std::vector<unsigned char> encode_pgm(const IrisImage& image);
IrisImage decode_pgm(const std::vector<unsigned char>& bytes);

// Writes a mask as P5 with 255 where value >= 0.5 and 0 elsewhere.
void write_mask_pgm(const Tensor& mask, const std::filesystem::path& path);

}  // namespace irisgrad
