#include "irisgrad/decoders.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "irisgrad/ops.hpp"

namespace irisgrad {

std::string to_string(LatentSpace space) { return space == LatentSpace::Z ? "Z" : "W"; }

LatentSpace parse_latent_space(const std::string& text) {
  if (text == "Z" || text == "z") return LatentSpace::Z;
  if (text == "W" || text == "w") return LatentSpace::W;
  throw std::invalid_argument("latent space must be Z or W, got '" + text + "'");
}

LatentCode LatentCode::sample(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentCode code;
  code.values.resize(dim);
  for (auto& v : code.values) v = normal(rng);
  code.space = LatentSpace::Z;
  code.seed = seed;
  return code;
}

Tensor LatentCode::tensor(bool requires_grad) const { return Tensor::vector(values, requires_grad); }

namespace {

Tensor gaussian_kernel(double sigma, bool horizontal) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const std::size_t n = 2 * radius + 1;
  std::vector<double> k(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-t * t / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return horizontal ? Tensor({1, 1, 1, n}, k) : Tensor({1, 1, n, 1}, k);
}

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor half_sigmoid(const Tensor& latent, std::size_t index) { return sigmoid(select(latent, index) * 0.5); }

}  // namespace

ProceduralParams ProceduralParamTensors::value() const {
  ProceduralParams p;
  p.pupil_radius = pupil_radius.item();
  p.iris_radius = iris_radius.item();
  p.aperture = aperture.item();
  p.blur_mix = blur_mix.item();
  p.center_x = center_x.item();
  p.center_y = center_y.item();
  p.texture_gain = texture_gain.item();
  p.base_level = base_level.item();
  p.texture.assign(texture.values().begin(), texture.values().end());
  p.texture_rotation = texture_rotation;
  return p;
}

ProceduralParamTensors ProceduralParamTensors::constant(const ProceduralParams& p) {
  ProceduralParamTensors t;
  t.pupil_radius = Tensor::scalar(p.pupil_radius);
  t.iris_radius = Tensor::scalar(p.iris_radius);
  t.aperture = Tensor::scalar(p.aperture);
  t.blur_mix = Tensor::scalar(p.blur_mix);
  t.center_x = Tensor::scalar(p.center_x);
  t.center_y = Tensor::scalar(p.center_y);
  t.texture_gain = Tensor::scalar(p.texture_gain);
  t.base_level = Tensor::scalar(p.base_level);
  t.texture = Tensor::vector(p.texture);
  t.texture_rotation = p.texture_rotation;
  return t;
}

ProceduralDecoder::ProceduralDecoder(ProceduralConfig config) : config_(config) {
  if (config_.latent_dim < procedural_latent::first_texture) {
    throw std::invalid_argument("procedural decoder needs latent_dim >= 8, got " +
                                std::to_string(config_.latent_dim));
  }
  if (config_.size.width < 16 || config_.size.height < 16) {
    throw std::invalid_argument("procedural decoder needs at least 16x16 pixels");
  }
  if (!(config_.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  const double side = static_cast<double>(std::min(config_.size.width, config_.size.height));
  blur_sigma_ = config_.blur_sigma > 0.0 ? config_.blur_sigma : 1.5 * side / 120.0;

  const std::size_t H = config_.size.height, W = config_.size.width;
  std::vector<double> xs(H * W), ys(H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      xs[i * W + j] = static_cast<double>(j);
      ys[i * W + j] = static_cast<double>(i);
    }
  grid_x_ = Tensor({H, W}, std::move(xs));
  grid_y_ = Tensor({H, W}, std::move(ys));
  blur_row_ = gaussian_kernel(blur_sigma_, true);
  blur_col_ = gaussian_kernel(blur_sigma_, false);

  const std::size_t count = (config_.latent_dim - procedural_latent::first_texture) / 2;
  for (std::size_t j = 0; j < count; ++j) {
    components_.push_back({0.5 + 0.75 * static_cast<double>(j % 4),
                           static_cast<double>(6 + (j * 11) % 37)});
  }
}

double ProceduralDecoder::half_extent() const {
  return static_cast<double>(std::min(config_.size.width, config_.size.height)) / 2.0;
}

double ProceduralDecoder::pupil_radius_min() const { return 0.08 * half_extent(); }
double ProceduralDecoder::pupil_radius_max() const { return 0.5 * half_extent(); }

ProceduralParamTensors ProceduralDecoder::parameters(const Tensor& latent) const {
  namespace L = procedural_latent;
  if (latent.ndim() != 1 || latent.size() != config_.latent_dim) {
    throw std::invalid_argument("procedural decoder expects a latent of length " +
                                std::to_string(config_.latent_dim) + ", got shape " +
                                shape_string(latent.shape()));
  }
  const double R = half_extent();
  const double W = static_cast<double>(config_.size.width);
  const double H = static_cast<double>(config_.size.height);
  ProceduralParamTensors p;
  p.pupil_radius = half_sigmoid(latent, L::pupil_radius) * (0.42 * R) + 0.08 * R;
  p.iris_radius = p.pupil_radius + 0.1 * R + (0.75 * R - p.pupil_radius) * half_sigmoid(latent, L::iris_radius);
  p.aperture = p.pupil_radius +
               (p.iris_radius - p.pupil_radius) * (half_sigmoid(latent, L::aperture) * 0.55 + 0.3);
  p.blur_mix = half_sigmoid(latent, L::blur_mix);
  p.center_x = tanh(select(latent, L::center_x) * 0.5) * (0.05 * W) + (W - 1.0) / 2.0;
  p.center_y = tanh(select(latent, L::center_y) * 0.5) * (0.05 * H) + (H - 1.0) / 2.0;
  p.texture_gain = half_sigmoid(latent, L::texture_gain) + 0.5;
  p.base_level = tanh(select(latent, L::base_level) * 0.5) * 0.03 + ProceduralPalette::iris;
  const std::size_t tex = config_.latent_dim - L::first_texture;
  p.texture = tex > 0 ? slice(latent, 0, L::first_texture, tex) : Tensor(Shape{0}, {});
  return p;
}

Tensor ProceduralDecoder::render(const ProceduralParams& params) const {
  return render(ProceduralParamTensors::constant(params));
}

Tensor ProceduralDecoder::render(const ProceduralParamTensors& p) const {
  const std::size_t H = config_.size.height, W = config_.size.width;
  const double inv_tau = 1.0 / config_.temperature;
  Tensor dx = grid_x_ - p.center_x;
  Tensor dy = grid_y_ - p.center_y;
  Tensor r = sqrt(square(dx) + square(dy) + 1e-6);
  Tensor pupil_w = sigmoid((p.pupil_radius - r) * inv_tau);
  Tensor iris_w = sigmoid((p.iris_radius - r) * inv_tau);
  Tensor visible = sigmoid((p.aperture + dy) * inv_tau) * sigmoid((p.aperture - dy) * inv_tau);

  // Texture lives in rubber-sheet coordinates (normalized radius, angle) so
  // it follows the annulus when the radii change.
  const std::size_t used = std::min(components_.size(), p.texture.size() / 2);
  Tensor iris_level;
  if (used == 0) {
    iris_level = p.base_level * Tensor::ones({H, W});
  } else {
    Tensor rho = (r - p.pupil_radius) / (p.iris_radius - p.pupil_radius);
    Tensor theta = atan2(dy, dx);
    Tensor raw;
    for (std::size_t j = 0; j < used; ++j) {
      const auto& c = components_[j];
      Tensor psi = rho * (2.0 * std::numbers::pi * c.radial_cycles) + theta * c.angular_cycles -
                   c.angular_cycles * p.texture_rotation;
      Tensor term = cos(psi) * select(p.texture, 2 * j) + sin(psi) * select(p.texture, 2 * j + 1);
      raw = j == 0 ? term : raw + term;
    }
    Tensor rc = clamp(rho, 0.0, 1.0);
    Tensor envelope = rc * (1.0 - rc) * 2.8 + 0.3;
    constexpr double amplitude = 0.08, limit = 0.17;
    Tensor sharp = tanh(raw * envelope * p.texture_gain * (amplitude / limit / std::sqrt(static_cast<double>(used)))) * limit;
    Conv2dOptions reflect;
    reflect.padding = Padding::reflect;
    Tensor blurred = reshape(conv2d(conv2d(reshape(sharp, {1, H, W}), blur_row_, reflect), blur_col_, reflect), {H, W});
    iris_level = sharp + (blurred - sharp) * p.blur_mix + p.base_level;
  }
  Tensor inner = pupil_w * ProceduralPalette::pupil + (1.0 - pupil_w) * iris_level;
  Tensor disk = iris_w * inner + (1.0 - iris_w) * ProceduralPalette::sclera;
  return visible * disk + (1.0 - visible) * ProceduralPalette::eyelid;
}

Tensor ProceduralDecoder::oracle_mask(const ProceduralParamTensors& p) const {
  const double inv_tau = 1.0 / config_.temperature;
  Tensor dx = grid_x_ - p.center_x;
  Tensor dy = grid_y_ - p.center_y;
  Tensor r = sqrt(square(dx) + square(dy) + 1e-6);
  Tensor pupil_w = sigmoid((p.pupil_radius - r) * inv_tau);
  Tensor iris_w = sigmoid((p.iris_radius - r) * inv_tau);
  Tensor visible = sigmoid((p.aperture + dy) * inv_tau) * sigmoid((p.aperture - dy) * inv_tau);
  return visible * iris_w * (1.0 - pupil_w);
}

std::pair<ProceduralParams, Tensor> ProceduralDecoder::oracle(const Tensor& latent) const {
  auto p = parameters(latent);
  return {p.value(), oracle_mask(p)};
}

Tensor ProceduralDecoder::synthesize(const Tensor& latent) const { return render(parameters(latent)); }

// ---------------------------------------------------------------------------

ConvDecoder::ConvDecoder(ConvDecoderConfig config) : config_(std::move(config)) {
  if (config_.channels.size() < 2) throw std::invalid_argument("conv decoder needs at least one stage");
  const std::size_t factor = std::size_t{1} << (config_.channels.size() - 1);
  if (config_.size.width % factor || config_.size.height % factor) {
    throw std::invalid_argument("conv decoder resolution must be divisible by " + std::to_string(factor));
  }
  coarse_h_ = config_.size.height / factor;
  coarse_w_ = config_.size.width / factor;
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.latent_dim;
  const std::size_t cells = config_.channels[0] * coarse_h_ * coarse_w_;
  weights_.push_back(random_normal({d, cells}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  weights_.push_back(random_normal({cells}, 0.1, rng));
  for (std::size_t s = 0; s + 1 < config_.channels.size(); ++s) {
    const std::size_t cin = config_.channels[s], cout = config_.channels[s + 1];
    weights_.push_back(random_normal({cout, cin, 3, 3}, 1.5 / std::sqrt(9.0 * static_cast<double>(cin)), rng));
    weights_.push_back(random_normal({cout}, 0.1, rng));
  }
  const std::size_t last = config_.channels.back();
  weights_.push_back(random_normal({1, last, 3, 3}, 2.0 / std::sqrt(9.0 * static_cast<double>(last)), rng));
  weights_.push_back(random_normal({1}, 0.1, rng));
  check_weights();
}

ConvDecoder::ConvDecoder(ConvDecoderConfig config, std::vector<Tensor> weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  const std::size_t factor = std::size_t{1} << (config_.channels.size() - 1);
  if (config_.size.width % factor || config_.size.height % factor) {
    throw std::invalid_argument("conv decoder resolution must be divisible by " + std::to_string(factor));
  }
  coarse_h_ = config_.size.height / factor;
  coarse_w_ = config_.size.width / factor;
  check_weights();
}

void ConvDecoder::check_weights() const {
  const std::size_t expected = 2 * config_.channels.size() + 2;
  if (weights_.size() != expected) {
    throw std::invalid_argument("conv decoder expects " + std::to_string(expected) + " weight tensors, got " +
                                std::to_string(weights_.size()));
  }
  const std::size_t cells = config_.channels[0] * coarse_h_ * coarse_w_;
  if (weights_[0].shape() != Shape{config_.latent_dim, cells}) {
    throw std::invalid_argument("conv decoder dense weight has shape " + shape_string(weights_[0].shape()));
  }
}

Tensor ConvDecoder::synthesize(const Tensor& latent) const {
  const std::size_t d = config_.latent_dim;
  if (latent.ndim() != 1 || latent.size() != d) {
    throw std::invalid_argument("conv decoder expects a latent of length " + std::to_string(d) +
                                ", got shape " + shape_string(latent.shape()));
  }
  const std::size_t c0 = config_.channels[0];
  Tensor h = matmul(reshape(latent, {1, d}), weights_[0]);
  h = reshape(h, {c0 * coarse_h_ * coarse_w_}) + weights_[1];
  h = tanh(reshape(h, {c0, coarse_h_, coarse_w_}));
  std::size_t w = 2;
  for (std::size_t s = 0; s + 1 < config_.channels.size(); ++s, w += 2) {
    h = conv2d(upsample_nearest2x(h), weights_[w]);
    h = tanh(add_channel_bias(h, weights_[w + 1]));
  }
  h = sigmoid(add_channel_bias(conv2d(h, weights_[w]), weights_[w + 1]));
  return reshape(h, {config_.size.height, config_.size.width});
}

// ---------------------------------------------------------------------------

MappingNetwork::MappingNetwork(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  weights_.push_back(random_normal({dim, dim}, 1.2 * scale, rng));
  weights_.push_back(random_normal({dim}, 0.1, rng));
  weights_.push_back(random_normal({dim, dim}, 1.5 * scale, rng));
  weights_.push_back(random_normal({dim}, 0.2, rng));
}

MappingNetwork::MappingNetwork(std::vector<Tensor> weights) : weights_(std::move(weights)) {
  if (weights_.size() != 4 || weights_[0].ndim() != 2) {
    throw std::invalid_argument("mapping network expects 4 weight tensors");
  }
  dim_ = weights_[0].dim(0);
}

Tensor MappingNetwork::map(const Tensor& z) const {
  if (z.ndim() != 1 || z.size() != dim_) {
    throw std::invalid_argument("mapping expects a latent of length " + std::to_string(dim_) + ", got shape " +
                                shape_string(z.shape()));
  }
  Tensor h = tanh(reshape(matmul(reshape(z, {1, dim_}), weights_[0]), {dim_}) + weights_[1]);
  return reshape(matmul(reshape(h, {1, dim_}), weights_[2]), {dim_}) + weights_[3];
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kWeightMagic[4] = {'I', 'R', 'D', 'W'};
constexpr std::uint32_t kWeightVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("truncated weight file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void save_weights(const std::vector<Tensor>& tensors, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(kWeightMagic, 4);
  put_le<std::uint32_t>(os, kWeightVersion);
  put_le<std::uint64_t>(os, tensors.size());
  for (const auto& t : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<Tensor> load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a weight file");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kWeightVersion) throw std::runtime_error("unsupported weight file version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(is);
  std::vector<Tensor> tensors;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint32_t>(is);
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    tensors.emplace_back(std::move(shape), std::move(values));
  }
  return tensors;
}

// ---------------------------------------------------------------------------

Generator::Generator(std::shared_ptr<const Synthesis> synthesis, std::optional<MappingNetwork> mapping)
    : synthesis_(std::move(synthesis)), mapping_(std::move(mapping)) {
  if (!synthesis_) throw std::invalid_argument("generator needs a synthesis network");
  if (mapping_ && mapping_->dim() != synthesis_->latent_dim()) {
    throw std::invalid_argument("mapping dimension does not match the decoder latent dimension");
  }
}

Tensor Generator::generate(const Tensor& z) const {
  return mapping_ ? synthesis_->synthesize(mapping_->map(z)) : synthesis_->synthesize(z);
}

Tensor Generator::generate_from_w(const Tensor& w) const {
  if (!mapping_) throw std::logic_error("generator has no mapping network, W space is unavailable");
  return synthesis_->synthesize(w);
}

Tensor Generator::decode(const Tensor& latent, LatentSpace space) const {
  return space == LatentSpace::Z ? generate(latent) : generate_from_w(latent);
}

Tensor Generator::map(const Tensor& z) const { return mapping().map(z); }

LatentCode Generator::map(const LatentCode& z) const {
  if (z.space != LatentSpace::Z) throw std::invalid_argument("mapping expects a Z-space code");
  NoGradScope no_grad;
  Tensor w = map(z.tensor());
  return {std::vector<double>(w.values().begin(), w.values().end()), LatentSpace::W, z.seed};
}

IrisImage Generator::render(const LatentCode& code) const {
  NoGradScope no_grad;
  return IrisImage::from_tensor(decode(code.tensor(), code.space));
}

const MappingNetwork& Generator::mapping() const {
  if (!mapping_) throw std::logic_error("generator has no mapping network");
  return *mapping_;
}

const ProceduralDecoder* Generator::procedural() const {
  return dynamic_cast<const ProceduralDecoder*>(synthesis_.get());
}

}  // namespace irisgrad
