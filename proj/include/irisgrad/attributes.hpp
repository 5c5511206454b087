#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "irisgrad/decoders.hpp"
#include "irisgrad/geometry.hpp"
#include "irisgrad/identity.hpp"
#include "irisgrad/tensor.hpp"

namespace irisgrad {

enum class AttributeKind {
  sharpness,
  pupil_radius,
  iris_radius,
  pupil_iris_ratio,
  eyelid_hold,
  mask_hold,
  identity_hold,
};

std::string to_string(AttributeKind kind);
AttributeKind parse_attribute_kind(const std::string& text);
// Hold kinds pin an attribute to the initial image instead of a target.
bool is_hold(AttributeKind kind);

struct AttributeSpec {
  AttributeKind kind;
  // Required for targeted kinds, absent for hold kinds. Units: score points
  // for sharpness, pixels for radii, ratio points (0-100) for the PIR.
  std::optional<double> target;
  double weight = 1.0;

  void validate() const;
};

struct SharpnessConstants {
  double power_scale = 1'800'000.0;  // C
  // Band-pass kernel: difference of two unit-sum Gaussians on a size x size
  // window, times `gain`. Pixels are taken on the 0..255 scale.
  std::size_t size = 9;
  double sigma_narrow = 1.0;
  double sigma_wide = 2.0;
  double gain = 400.0;
};

// [size x size], symmetric, sums to zero.
std::vector<double> sharpness_kernel(const SharpnessConstants& k = {});

// 100 P^2 / (P^2 + C^2) with P the mask-weighted mean squared band-pass
// response. The mask only weights the response; no gradient reaches it.
Tensor sharpness_score(const Tensor& image, const Tensor& mask, const SharpnessConstants& k = {});
Tensor loss_sharpness(const Tensor& image, const Tensor& mask, double target, const SharpnessConstants& k = {});

inline constexpr double kMaskClip = 1e-7;

// Mean per-pixel binary cross-entropy of a soft mask against a binary
// reference, with the soft mask clipped to [1e-7, 1 - 1e-7].
Tensor loss_mask(const Tensor& mask, const Tensor& reference);
// |Lambda(mask) - reference_opening|
Tensor loss_eyelid(const Tensor& mask, double reference_opening, double beta = 0.1);
// Both images go through soft_mask; the reference branch carries no gradient.
Tensor loss_eyelid(const Tensor& image, const Tensor& reference_image, const MaskBand& band = {},
                   double beta = 0.1);

// PIR in ratio points: 100 r_pupil / (r_iris + 1e-6).
Tensor pupil_iris_ratio(const CircleParams& circles);
Tensor loss_pupil(const CircleParams& circles, double target);
Tensor loss_iris(const CircleParams& circles, double target);
Tensor loss_pir(const CircleParams& circles, double target);

struct LossOptions {
  SharpnessConstants sharpness{};
  CircleEstimator circles{};
  double eyelid_beta = 0.1;
  // Weight of 0.5 ||z - z0||^2; off unless set.
  double latent_weight = 0.0;
};

// Attribute values of one image.
struct Measurements {
  double sharpness = 0.0;
  double pupil_radius = 0.0;
  double iris_radius = 0.0;
  double pupil_iris_ratio = 0.0;
  double eyelid_opening = 0.0;

  double get(AttributeKind kind) const;
};

Measurements measure(const Tensor& image, const LossOptions& options = {});

// Quantities of the initial image that the hold terms compare against.
struct Reference {
  Tensor image;
  Tensor binary_mask;
  double eyelid_opening = 0.0;
  std::optional<IdentityFeatures> identity;
};

struct LossTerm {
  std::string name;
  double weight;
  Tensor value;  // unweighted
};

struct LossEvaluation {
  Tensor image;
  Tensor total;
  std::vector<LossTerm> terms;
  Measurements measured;
};

// Weighted sum of attribute and hold terms, evaluated on one decoded image.
class CompositeLoss {
 public:
  CompositeLoss(std::vector<AttributeSpec> specs, std::optional<Tensor> reference_image, LossOptions options = {},
                std::shared_ptr<const GaborBank> bank = nullptr);

  LossEvaluation evaluate(const Tensor& image, const Tensor* latent = nullptr) const;
  LossEvaluation evaluate(const Generator& generator, const Tensor& latent, LatentSpace space) const;

  // Anchor of the optional latent regularizer.
  void set_latent_reference(std::vector<double> z0) { latent_reference_ = std::move(z0); }

  const std::vector<AttributeSpec>& specs() const { return specs_; }
  const std::optional<Reference>& reference() const { return reference_; }
  const LossOptions& options() const { return options_; }
  bool has_identity() const;
  bool has_targets() const;

 private:
  std::vector<AttributeSpec> specs_;
  LossOptions options_;
  std::shared_ptr<const GaborBank> bank_;
  std::optional<Reference> reference_;
  std::vector<double> latent_reference_;
};

}  // namespace irisgrad
