#include "irisgrad/identity.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "irisgrad/ops.hpp"

namespace irisgrad {

namespace {

std::vector<double> gaussian_factor(double sigma, std::size_t size) {
  const double c = static_cast<double>(size / 2);
  std::vector<double> g(size);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double t = static_cast<double>(i) - c;
    g[i] = std::exp(-t * t / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

std::vector<double> carrier_factor(const GaborSpec& s, std::size_t size) {
  const double c = static_cast<double>(size / 2);
  std::vector<double> f(size);
  double mean = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double t = static_cast<double>(i) - c;
    const double phase = 2.0 * std::numbers::pi * t / s.wavelength;
    f[i] = std::exp(-t * t / (2.0 * s.sigma * s.sigma)) * (s.odd ? std::sin(phase) : std::cos(phase));
    mean += f[i];
  }
  mean /= static_cast<double>(size);
  double norm = 0.0;
  for (auto& v : f) {
    v -= mean;
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : f) v /= norm;
  return f;
}

void put_u16(std::vector<std::uint8_t>& out, std::size_t v) {
  if (v > 0xFFFF) throw std::invalid_argument("iris code dimension exceeds 65535");
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::size_t get_u16(const std::vector<std::uint8_t>& in, std::size_t at) {
  return static_cast<std::size_t>(in[at]) | (static_cast<std::size_t>(in[at + 1]) << 8);
}

void pack(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& bits) {
  const std::size_t start = out.size();
  out.resize(start + (bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[start + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
}

std::vector<std::uint8_t> unpack(const std::vector<std::uint8_t>& in, std::size_t at, std::size_t n) {
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (in[at + i / 8] >> (i % 8)) & 1u;
  return bits;
}

constexpr std::size_t kCodeVersion = 1;

}  // namespace

GaborBank::GaborBank(std::vector<GaborSpec> specs, std::size_t size) : specs_(std::move(specs)), size_(size) {
  if (specs_.empty()) throw std::invalid_argument("Gabor bank needs at least one filter");
  if (size_ % 2 == 0 || size_ < 3) throw std::invalid_argument("Gabor kernel size must be odd and >= 3");
  std::ostringstream fp;
  fp.precision(17);
  fp << size_;
  for (const auto& s : specs_) {
    if (!(s.wavelength > 0.0) || !(s.sigma > 0.0)) {
      throw std::invalid_argument("Gabor wavelength and sigma must be positive");
    }
    auto carrier = carrier_factor(s, size_);
    auto envelope = gaussian_factor(s.sigma, size_);
    if (s.orientation == GaborOrientation::angular) {
      row_factors_.emplace_back(Shape{1, 1, 1, size_}, std::move(carrier));
      col_factors_.emplace_back(Shape{1, 1, size_, 1}, std::move(envelope));
    } else {
      row_factors_.emplace_back(Shape{1, 1, 1, size_}, std::move(envelope));
      col_factors_.emplace_back(Shape{1, 1, size_, 1}, std::move(carrier));
    }
    fp << '|' << s.wavelength << ',' << s.sigma << ',' << static_cast<int>(s.orientation) << ',' << s.odd;
  }
  fingerprint_ = fp.str();
}

GaborBank GaborBank::loss_bank() {
  std::vector<GaborSpec> specs;
  for (double wavelength : {6.0, 10.0, 16.0})
    for (auto o : {GaborOrientation::angular, GaborOrientation::radial})
      specs.push_back({wavelength, 3.0, o, false});
  return GaborBank(std::move(specs));
}

GaborBank GaborBank::evaluation_bank() {
  std::vector<GaborSpec> specs;
  for (double wavelength : {8.0, 13.0})
    for (bool odd : {false, true}) specs.push_back({wavelength, 2.5, GaborOrientation::angular, odd});
  return GaborBank(std::move(specs));
}

std::vector<double> GaborBank::dense_kernel(std::size_t i) const {
  const auto& r = row_factors_.at(i).values();
  const auto& c = col_factors_.at(i).values();
  std::vector<double> k(size_ * size_);
  for (std::size_t y = 0; y < size_; ++y)
    for (std::size_t x = 0; x < size_; ++x) k[y * size_ + x] = c[y] * r[x];
  return k;
}

Tensor GaborBank::respond(const Tensor& polar) const {
  if (polar.ndim() != 2) throw std::invalid_argument("polar image must be [rows x cols]");
  const std::size_t rows = polar.dim(0), cols = polar.dim(1);
  if (rows <= size_ / 2 || cols <= size_ / 2) throw std::invalid_argument("polar image smaller than Gabor kernel");
  Tensor x = reshape(polar, {1, rows, cols});
  Conv2dOptions opt;
  opt.padding = Padding::reflect;
  std::vector<Tensor> parts;
  parts.reserve(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    parts.push_back(conv2d(conv2d(x, row_factors_[i], opt), col_factors_[i], opt));
  }
  return concat(parts, 0);
}

IdentityFeatures phi_id(const Tensor& image, const CircleParams& circles, const GaborBank& bank) {
  return {bank.respond(normalize(image, circles).values * kIdentityIntensityScale), bank.fingerprint()};
}

Tensor loss_identity(const IdentityFeatures& features, const IdentityFeatures& reference) {
  if (features.bank != reference.bank) throw std::invalid_argument("identity features come from different banks");
  if (features.responses.shape() != reference.responses.shape()) {
    throw std::invalid_argument("identity feature shapes differ: " + shape_string(features.responses.shape()) +
                                " vs " + shape_string(reference.responses.shape()));
  }
  return mean(abs(features.responses - reference.responses));
}

IrisCode iris_code(const Tensor& responses) {
  if (responses.ndim() != 3) throw std::invalid_argument("responses must be [filters x rows x cols]");
  IrisCode code;
  code.filters = responses.dim(0);
  code.rows = responses.dim(1);
  code.cols = responses.dim(2);
  if (code.rows <= 2 * kCodeBorder || code.cols <= 2 * kCodeBorder) {
    throw std::invalid_argument("polar image too small for the code border");
  }
  const auto& v = responses.values();
  code.bits.resize(code.size());
  code.valid.resize(code.size());
  for (std::size_t f = 0; f < code.filters; ++f)
    for (std::size_t r = 0; r < code.rows; ++r)
      for (std::size_t c = 0; c < code.cols; ++c) {
        const std::size_t i = (f * code.rows + r) * code.cols + c;
        code.bits[i] = v[i] > 0.0 ? 1 : 0;
        const bool inside = r >= kCodeBorder && r + kCodeBorder < code.rows && c >= kCodeBorder &&
                            c + kCodeBorder < code.cols;
        code.valid[i] = inside ? 1 : 0;
      }
  return code;
}

IrisCode iris_code(const Tensor& image, const CircleParams& circles, const GaborBank& bank) {
  NoGradScope no_grad;
  return iris_code(bank.respond(normalize(image, circles).values));
}

double hamming(const IrisCode& a, const IrisCode& b, std::size_t max_shift) {
  if (a.filters != b.filters || a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("iris codes come from different banks or polar sizes");
  }
  const long cols = static_cast<long>(a.cols);
  const long shift_limit = std::min(static_cast<long>(max_shift), cols - 1);
  double best = std::numeric_limits<double>::infinity();
  for (long s = -shift_limit; s <= shift_limit; ++s) {
    std::size_t differ = 0, counted = 0;
    for (std::size_t f = 0; f < a.filters; ++f)
      for (std::size_t r = 0; r < a.rows; ++r) {
        const std::size_t base = (f * a.rows + r) * a.cols;
        for (long c = 0; c < cols; ++c) {
          const std::size_t ia = base + static_cast<std::size_t>(c);
          const std::size_t ib = base + static_cast<std::size_t>(((c + s) % cols + cols) % cols);
          if (!a.valid[ia] || !b.valid[ib]) continue;
          ++counted;
          differ += a.bits[ia] != b.bits[ib];
        }
      }
    if (counted > 0) best = std::min(best, static_cast<double>(differ) / static_cast<double>(counted));
  }
  if (!std::isfinite(best)) throw std::invalid_argument("iris codes have disjoint validity masks");
  return best;
}

std::vector<std::uint8_t> encode_iris_code(const IrisCode& code) {
  if (code.bits.size() != code.size() || code.valid.size() != code.size()) {
    throw std::invalid_argument("iris code bit arrays do not match its dimensions");
  }
  std::vector<std::uint8_t> out;
  put_u16(out, code.rows);
  put_u16(out, code.cols);
  put_u16(out, code.filters);
  put_u16(out, kCodeVersion);
  pack(out, code.bits);
  pack(out, code.valid);
  return out;
}

IrisCode decode_iris_code(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw std::runtime_error("iris code file shorter than its header");
  IrisCode code;
  code.rows = get_u16(bytes, 0);
  code.cols = get_u16(bytes, 2);
  code.filters = get_u16(bytes, 4);
  if (get_u16(bytes, 6) != kCodeVersion) throw std::runtime_error("unsupported iris code version");
  const std::size_t packed = (code.size() + 7) / 8;
  if (bytes.size() != 8 + 2 * packed) throw std::runtime_error("iris code file has the wrong length");
  code.bits = unpack(bytes, 8, code.size());
  code.valid = unpack(bytes, 8 + packed, code.size());
  return code;
}

void write_iris_code(const IrisCode& code, const std::filesystem::path& path) {
  const auto bytes = encode_iris_code(code);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

IrisCode read_iris_code(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_iris_code(bytes);
}

double texture_energy(const Tensor& image, const CircleParams& circles, const GaborBank& bank) {
  NoGradScope no_grad;
  const Tensor r = bank.respond(normalize(image, circles).values);
  const std::size_t F = r.dim(0), rows = r.dim(1), cols = r.dim(2);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t i = kCodeBorder; i + kCodeBorder < rows; ++i)
      for (std::size_t j = kCodeBorder; j + kCodeBorder < cols; ++j) {
        const double v = r.values()[(f * rows + i) * cols + j];
        total += v * v;
        ++n;
      }
  return total / static_cast<double>(n);
}

}  // namespace irisgrad
