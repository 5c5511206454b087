#include "irisgrad/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace irisgrad {

ImageSize parse_resolution(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw std::invalid_argument("resolution must look like WxH, got '" + text + "'");
  try {
    std::size_t used = 0;
    const auto w = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("width");
    const auto rest = text.substr(x + 1);
    const auto h = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("height");
    if (w == 0 || h == 0) throw std::invalid_argument("zero");
    return {w, h};
  } catch (const std::exception&) {
    throw std::invalid_argument("resolution must look like WxH, got '" + text + "'");
  }
}

IrisImage IrisImage::from_tensor(const Tensor& t) {
  if (t.ndim() != 2) throw std::invalid_argument("image tensor must be [H x W], got " + shape_string(t.shape()));
  return {t.dim(0), t.dim(1), std::vector<double>(t.values().begin(), t.values().end())};
}

Tensor IrisImage::tensor() const { return Tensor({height, width}, pixels); }

ImageFormat format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pgm") return ImageFormat::pgm;
  if (ext == ".png") return ImageFormat::png;
  throw std::invalid_argument("unsupported image extension '" + ext + "' (use .pgm or .png)");
}

std::vector<unsigned char> quantize(const IrisImage& image) {
  std::vector<unsigned char> body(image.pixels.size());
  for (std::size_t i = 0; i < body.size(); ++i)
    body[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(image.pixels[i], 0.0, 1.0)));
  return body;
}

std::vector<unsigned char> encode_pgm(const IrisImage& image) {
  const std::string header =
      "P5 " + std::to_string(image.width) + " " + std::to_string(image.height) + " 255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  auto body = quantize(image);
  bytes.insert(bytes.end(), body.begin(), body.end());
  return bytes;
}

IrisImage decode_pgm(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  if (next_token() != "P5") throw std::runtime_error("not a binary PGM (P5) file");
  const auto w = std::stoul(next_token());
  const auto h = std::stoul(next_token());
  const auto maxval = std::stoul(next_token());
  if (maxval == 0 || maxval > 255) throw std::runtime_error("only 8-bit PGM is supported");
  ++pos;  // single whitespace before the body
  if (bytes.size() < pos + w * h) throw std::runtime_error("truncated PGM body");
  IrisImage img{h, w, std::vector<double>(w * h)};
  for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = bytes[pos + i] / static_cast<double>(maxval);
  return img;
}

namespace {

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_png(const IrisImage& image, const std::filesystem::path& path) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = PNG_FORMAT_GRAY;
  auto body = quantize(image);
  if (!png_image_write_to_file(&desc, path.string().c_str(), 0, body.data(), 0, nullptr)) {
    std::string msg = desc.message;
    png_image_free(&desc);
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + msg);
  }
}

IrisImage read_png(const std::filesystem::path& path) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.string().c_str())) {
    throw std::runtime_error("cannot read PNG '" + path.string() + "': " + desc.message);
  }
  desc.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> body(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, body.data(), 0, nullptr)) {
    std::string msg = desc.message;
    png_image_free(&desc);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + msg);
  }
  IrisImage img{desc.height, desc.width, std::vector<double>(body.size())};
  for (std::size_t i = 0; i < body.size(); ++i) img.pixels[i] = body[i] / 255.0;
  return img;
}

}  // namespace

void write_image(const IrisImage& image, const std::filesystem::path& path, ImageFormat format) {
  if (format == ImageFormat::pgm) {
    write_bytes(path, encode_pgm(image));
  } else {
    write_png(image, path);
  }
}

void write_image(const IrisImage& image, const std::filesystem::path& path) {
  write_image(image, path, format_for(path));
}

IrisImage read_image(const std::filesystem::path& path) {
  if (format_for(path) == ImageFormat::png) return read_png(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

void write_mask_pgm(const Tensor& mask, const std::filesystem::path& path) {
  auto img = IrisImage::from_tensor(mask);
  for (auto& p : img.pixels) p = p >= 0.5 ? 1.0 : 0.0;
  write_bytes(path, encode_pgm(img));
}

}  // namespace irisgrad
