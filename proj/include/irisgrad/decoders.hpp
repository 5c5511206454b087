#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "irisgrad/image.hpp"
#include "irisgrad/tensor.hpp"

namespace irisgrad {

enum class LatentSpace { Z, W };

std::string to_string(LatentSpace space);
LatentSpace parse_latent_space(const std::string& text);

struct LatentCode {
  std::vector<double> values;
  LatentSpace space = LatentSpace::Z;
  std::uint64_t seed = 0;

  // Standard-normal draw of length `dim` from a generator seeded with `seed`.
  static LatentCode sample(std::size_t dim, std::uint64_t seed);
  Tensor tensor(bool requires_grad = false) const;
  std::size_t dim() const { return values.size(); }
};

// Differentiable map from a latent vector to an image tensor [H x W].
class Synthesis {
 public:
  virtual ~Synthesis() = default;
  virtual Tensor synthesize(const Tensor& latent) const = 0;
  virtual ImageSize size() const = 0;
  virtual std::size_t latent_dim() const = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Procedural renderer
// ---------------------------------------------------------------------------

// Latent layout of the procedural decoder. Coordinates from
// kFirstTexture on come in (cosine, sine) pairs, one pair per texture
// component.
namespace procedural_latent {
inline constexpr std::size_t pupil_radius = 0;
inline constexpr std::size_t iris_radius = 1;
inline constexpr std::size_t aperture = 2;
inline constexpr std::size_t blur_mix = 3;
inline constexpr std::size_t center_x = 4;
inline constexpr std::size_t center_y = 5;
inline constexpr std::size_t texture_gain = 6;
inline constexpr std::size_t base_level = 7;
inline constexpr std::size_t first_texture = 8;
}  // namespace procedural_latent

struct ProceduralConfig {
  ImageSize size{};
  std::size_t latent_dim = 32;
  // Soft-boundary temperature in pixels.
  double temperature = 2.0;
  // Gaussian blur of the blurred texture layer; <= 0 picks 1.5 px per 120 px
  // of the shorter image side.
  double blur_sigma = 0.0;
};

// Intensity palette of the rendered regions.
struct ProceduralPalette {
  static constexpr double pupil = 0.02;
  static constexpr double iris = 0.55;
  static constexpr double sclera = 0.98;
  static constexpr double eyelid = 0.97;
};

// Analytic parameters of one render, all lengths in pixels.
struct ProceduralParams {
  double pupil_radius = 0.0;
  double iris_radius = 0.0;
  // Half-height of the visible band between the eyelids.
  double aperture = 0.0;
  double blur_mix = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;
  double texture_gain = 1.0;
  double base_level = ProceduralPalette::iris;
  std::vector<double> texture;
  // Rotation of the iris texture in radians (not latent-driven).
  double texture_rotation = 0.0;
};

// The same parameters as differentiable tensors (0-d except `texture`).
struct ProceduralParamTensors {
  Tensor pupil_radius;
  Tensor iris_radius;
  Tensor aperture;
  Tensor blur_mix;
  Tensor center_x;
  Tensor center_y;
  Tensor texture_gain;
  Tensor base_level;
  Tensor texture;
  double texture_rotation = 0.0;

  ProceduralParams value() const;
  static ProceduralParamTensors constant(const ProceduralParams& p);
};

struct TextureComponent {
  double radial_cycles;
  double angular_cycles;
};

class ProceduralDecoder final : public Synthesis {
 public:
  explicit ProceduralDecoder(ProceduralConfig config);

  Tensor synthesize(const Tensor& latent) const override;
  ImageSize size() const override { return config_.size; }
  std::size_t latent_dim() const override { return config_.latent_dim; }
  std::string name() const override { return "procedural"; }

  const ProceduralConfig& config() const { return config_; }
  double blur_sigma() const { return blur_sigma_; }
  // min(H, W) / 2
  double half_extent() const;
  double pupil_radius_min() const;
  double pupil_radius_max() const;
  const std::vector<TextureComponent>& texture_components() const { return components_; }

  ProceduralParamTensors parameters(const Tensor& latent) const;
  Tensor render(const ProceduralParamTensors& params) const;
  Tensor render(const ProceduralParams& params) const;
  // Analytic iris-region probability used by the renderer.
  Tensor oracle_mask(const ProceduralParamTensors& params) const;
  std::pair<ProceduralParams, Tensor> oracle(const Tensor& latent) const;

 private:
  ProceduralConfig config_;
  double blur_sigma_;
  Tensor grid_x_;
  Tensor grid_y_;
  Tensor blur_row_;
  Tensor blur_col_;
  std::vector<TextureComponent> components_;
};

// ---------------------------------------------------------------------------
// Fixed random-weight networks
// ---------------------------------------------------------------------------

struct ConvDecoderConfig {
  ImageSize size{};
  std::size_t latent_dim = 32;
  std::uint64_t seed = 1;
  // Channels of the coarse grid and after each upsampling stage.
  std::vector<std::size_t> channels{16, 12, 8, 4};
};

// Dense layer to a coarse grid, then upsample + 3x3 conv + tanh stages and
// a final 3x3 conv with sigmoid. Width and height must be divisible by
// 2^(stages).
class ConvDecoder final : public Synthesis {
 public:
  explicit ConvDecoder(ConvDecoderConfig config);
  ConvDecoder(ConvDecoderConfig config, std::vector<Tensor> weights);

  Tensor synthesize(const Tensor& latent) const override;
  ImageSize size() const override { return config_.size; }
  std::size_t latent_dim() const override { return config_.latent_dim; }
  std::string name() const override { return "conv"; }

  const std::vector<Tensor>& weights() const { return weights_; }

 private:
  void check_weights() const;

  ConvDecoderConfig config_;
  std::size_t coarse_h_ = 0;
  std::size_t coarse_w_ = 0;
  std::vector<Tensor> weights_;
};

// Two dense layers with tanh between them: w = tanh(z A1 + b1) A2 + b2.
class MappingNetwork {
 public:
  MappingNetwork(std::size_t dim, std::uint64_t seed);
  explicit MappingNetwork(std::vector<Tensor> weights);

  Tensor map(const Tensor& z) const;
  std::size_t dim() const { return dim_; }
  const std::vector<Tensor>& weights() const { return weights_; }

 private:
  std::size_t dim_;
  std::vector<Tensor> weights_;
};

// Flat weight file: 16-byte header ("IRDW", u32 version, u64 tensor count),
// then per tensor a u32 rank, u32 dims and little-endian float64 values.
void save_weights(const std::vector<Tensor>& tensors, const std::filesystem::path& path);
std::vector<Tensor> load_weights(const std::filesystem::path& path);

// Z -> image, optionally through a mapping network into W.
class Generator {
 public:
  explicit Generator(std::shared_ptr<const Synthesis> synthesis,
                     std::optional<MappingNetwork> mapping = std::nullopt);

  // Z-space entry point: synthesize(mapping(z)) when a mapping is present.
  Tensor generate(const Tensor& z) const;
  Tensor generate_from_w(const Tensor& w) const;
  Tensor decode(const Tensor& latent, LatentSpace space) const;
  Tensor map(const Tensor& z) const;
  LatentCode map(const LatentCode& z) const;
  IrisImage render(const LatentCode& code) const;

  bool has_mapping() const { return mapping_.has_value(); }
  const MappingNetwork& mapping() const;
  const Synthesis& synthesis() const { return *synthesis_; }
  // Null for non-procedural decoders.
  const ProceduralDecoder* procedural() const;
  ImageSize size() const { return synthesis_->size(); }
  std::size_t latent_dim() const { return synthesis_->latent_dim(); }

 private:
  std::shared_ptr<const Synthesis> synthesis_;
  std::optional<MappingNetwork> mapping_;
};

}  // namespace irisgrad
