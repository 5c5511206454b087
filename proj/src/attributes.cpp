#include "irisgrad/attributes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "irisgrad/ops.hpp"

namespace irisgrad {

namespace {

constexpr std::pair<AttributeKind, const char*> kKindNames[] = {
    {AttributeKind::sharpness, "sharpness"},
    {AttributeKind::pupil_radius, "pupil_radius"},
    {AttributeKind::iris_radius, "iris_radius"},
    {AttributeKind::pupil_iris_ratio, "pupil_iris_ratio"},
    {AttributeKind::eyelid_hold, "eyelid_hold"},
    {AttributeKind::mask_hold, "mask_hold"},
    {AttributeKind::identity_hold, "identity_hold"},
};

double mask_total(const Tensor& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s;
}

}  // namespace

std::string to_string(AttributeKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  throw std::logic_error("unknown attribute kind");
}

AttributeKind parse_attribute_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames)
    if (text == name) return k;
  throw std::invalid_argument("unknown attribute kind '" + text + "'");
}

bool is_hold(AttributeKind kind) {
  return kind == AttributeKind::eyelid_hold || kind == AttributeKind::mask_hold ||
         kind == AttributeKind::identity_hold;
}

void AttributeSpec::validate() const {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw std::invalid_argument(to_string(kind) + ": weight must be finite and >= 0");
  }
  if (is_hold(kind) && target) throw std::invalid_argument(to_string(kind) + " takes no target");
  if (!is_hold(kind)) {
    if (!target) throw std::invalid_argument(to_string(kind) + " needs a target");
    if (!std::isfinite(*target)) throw std::invalid_argument(to_string(kind) + ": target must be finite");
  }
}

std::vector<double> sharpness_kernel(const SharpnessConstants& k) {
  if (k.size % 2 == 0) throw std::invalid_argument("sharpness kernel size must be odd");
  const double c = static_cast<double>(k.size / 2);
  std::vector<double> narrow(k.size * k.size), wide(k.size * k.size);
  double sn = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < k.size; ++i)
    for (std::size_t j = 0; j < k.size; ++j) {
      const double y = static_cast<double>(i) - c, x = static_cast<double>(j) - c;
      const double r2 = x * x + y * y;
      narrow[i * k.size + j] = std::exp(-r2 / (2.0 * k.sigma_narrow * k.sigma_narrow));
      wide[i * k.size + j] = std::exp(-r2 / (2.0 * k.sigma_wide * k.sigma_wide));
      sn += narrow[i * k.size + j];
      sw += wide[i * k.size + j];
    }
  std::vector<double> out(k.size * k.size);
  double mean = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = narrow[i] / sn - wide[i] / sw;
    mean += out[i];
  }
  // Both halves sum to one already; this removes the rounding residue.
  mean /= static_cast<double>(out.size());
  for (auto& v : out) v = (v - mean) * k.gain;
  return out;
}

Tensor sharpness_score(const Tensor& image, const Tensor& mask, const SharpnessConstants& k) {
  if (image.ndim() != 2) throw std::invalid_argument("image must be [H x W]");
  if (mask.shape() != image.shape()) throw std::invalid_argument("mask and image shapes differ");
  const double area = mask_total(mask);
  if (area <= kMinMaskOccupancy) throw DegenerateSegmentation("sharpness mask is empty");
  const std::size_t H = image.dim(0), W = image.dim(1);
  Conv2dOptions opt;
  opt.padding = Padding::reflect;
  Tensor kernel({1, 1, k.size, k.size}, sharpness_kernel(k));
  Tensor filtered = reshape(conv2d(reshape(image * 255.0, {1, H, W}), kernel, opt), {H, W});
  Tensor power = sum(square(filtered) * detach(mask)) / area;
  Tensor p2 = square(power);
  return p2 * 100.0 / (p2 + k.power_scale * k.power_scale);
}

Tensor loss_sharpness(const Tensor& image, const Tensor& mask, double target, const SharpnessConstants& k) {
  return abs(sharpness_score(image, mask, k) - target);
}

Tensor loss_mask(const Tensor& mask, const Tensor& reference) {
  if (mask.shape() != reference.shape()) {
    throw std::invalid_argument("mask shapes differ: " + shape_string(mask.shape()) + " vs " +
                                shape_string(reference.shape()));
  }
  Tensor m = clamp(mask, kMaskClip, 1.0 - kMaskClip);
  Tensor t = detach(reference);
  return -mean(t * log(m) + (1.0 - t) * log(1.0 - m));
}

Tensor loss_eyelid(const Tensor& mask, double reference_opening, double beta) {
  return abs(eyelid_opening(mask, beta) - reference_opening);
}

Tensor loss_eyelid(const Tensor& image, const Tensor& reference_image, const MaskBand& band, double beta) {
  double reference;
  {
    NoGradScope no_grad;
    reference = eyelid_opening(soft_mask(reference_image, band), beta).item();
  }
  return loss_eyelid(soft_mask(image, band), reference, beta);
}

Tensor pupil_iris_ratio(const CircleParams& circles) {
  return circles.pupil_radius * 100.0 / (circles.iris_radius + 1e-6);
}

Tensor loss_pupil(const CircleParams& circles, double target) { return abs(circles.pupil_radius - target); }
Tensor loss_iris(const CircleParams& circles, double target) { return abs(circles.iris_radius - target); }
Tensor loss_pir(const CircleParams& circles, double target) { return abs(pupil_iris_ratio(circles) - target); }

double Measurements::get(AttributeKind kind) const {
  switch (kind) {
    case AttributeKind::sharpness: return sharpness;
    case AttributeKind::pupil_radius: return pupil_radius;
    case AttributeKind::iris_radius: return iris_radius;
    case AttributeKind::pupil_iris_ratio: return pupil_iris_ratio;
    case AttributeKind::eyelid_hold: return eyelid_opening;
    default: throw std::invalid_argument(to_string(kind) + " has no scalar measurement");
  }
}

Measurements measure(const Tensor& image, const LossOptions& options) {
  NoGradScope no_grad;
  Tensor m = soft_mask(image, options.circles.band);
  const auto c = estimate_circles(image, m, options.circles);
  Measurements out;
  out.sharpness = sharpness_score(image, m, options.sharpness).item();
  out.pupil_radius = c.pupil_radius.item();
  out.iris_radius = c.iris_radius.item();
  out.pupil_iris_ratio = pupil_iris_ratio(c).item();
  out.eyelid_opening = eyelid_opening(m, options.eyelid_beta).item();
  return out;
}

CompositeLoss::CompositeLoss(std::vector<AttributeSpec> specs, std::optional<Tensor> reference_image,
                             LossOptions options, std::shared_ptr<const GaborBank> bank)
    : specs_(std::move(specs)), options_(std::move(options)), bank_(std::move(bank)) {
  if (specs_.empty()) throw std::invalid_argument("at least one attribute spec is required");
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    specs_[i].validate();
    for (std::size_t j = 0; j < i; ++j)
      if (specs_[j].kind == specs_[i].kind) {
        throw std::invalid_argument("duplicate attribute kind '" + to_string(specs_[i].kind) + "'");
      }
  }
  const bool holds = std::any_of(specs_.begin(), specs_.end(), [](const auto& s) { return is_hold(s.kind); });
  if (holds && !reference_image) throw std::invalid_argument("hold terms need the initial image x0");
  if (!(options_.latent_weight >= 0.0)) throw std::invalid_argument("latent weight must be >= 0");
  if (has_identity() && !bank_) bank_ = std::make_shared<const GaborBank>(GaborBank::loss_bank());

  if (reference_image) {
    NoGradScope no_grad;
    Reference ref;
    ref.image = reference_image->detach();
    Tensor m = soft_mask(ref.image, options_.circles.band);
    ref.binary_mask = binarize(m);
    ref.eyelid_opening = eyelid_opening(m, options_.eyelid_beta).item();
    if (has_identity()) ref.identity = phi_id(ref.image, estimate_circles(ref.image, m, options_.circles), *bank_);
    reference_ = std::move(ref);
  }
}

bool CompositeLoss::has_identity() const {
  return std::any_of(specs_.begin(), specs_.end(),
                     [](const auto& s) { return s.kind == AttributeKind::identity_hold; });
}

bool CompositeLoss::has_targets() const {
  return std::any_of(specs_.begin(), specs_.end(), [](const auto& s) { return !is_hold(s.kind); });
}

LossEvaluation CompositeLoss::evaluate(const Tensor& image, const Tensor* latent) const {
  LossEvaluation out;
  out.image = image;
  const MaskBand& band = options_.circles.band;
  Tensor m = soft_mask(image, band);

  const bool geometric = std::any_of(specs_.begin(), specs_.end(), [](const auto& s) {
    return s.kind == AttributeKind::pupil_radius || s.kind == AttributeKind::iris_radius ||
           s.kind == AttributeKind::pupil_iris_ratio || s.kind == AttributeKind::identity_hold;
  });
  std::optional<CircleParams> circles;
  if (geometric) circles = estimate_circles(image, m, options_.circles);

  out.total = Tensor::scalar(0.0);
  std::optional<double> sharpness, opening;
  for (const auto& spec : specs_) {
    Tensor value;
    switch (spec.kind) {
      case AttributeKind::sharpness: {
        Tensor score = sharpness_score(image, m, options_.sharpness);
        sharpness = score.item();
        value = abs(score - *spec.target);
        break;
      }
      case AttributeKind::pupil_radius: value = loss_pupil(*circles, *spec.target); break;
      case AttributeKind::iris_radius: value = loss_iris(*circles, *spec.target); break;
      case AttributeKind::pupil_iris_ratio: value = loss_pir(*circles, *spec.target); break;
      case AttributeKind::eyelid_hold: {
        Tensor lambda = eyelid_opening(m, options_.eyelid_beta);
        opening = lambda.item();
        value = abs(lambda - reference_->eyelid_opening);
        break;
      }
      case AttributeKind::mask_hold: value = loss_mask(m, reference_->binary_mask); break;
      case AttributeKind::identity_hold:
        value = loss_identity(phi_id(image, *circles, *bank_), *reference_->identity);
        break;
    }
    out.total = out.total + value * spec.weight;
    out.terms.push_back({to_string(spec.kind), spec.weight, value});
  }

  if (options_.latent_weight > 0.0) {
    if (!latent) throw std::invalid_argument("latent regularizer needs the latent tensor");
    if (latent_reference_.size() != latent->size()) {
      throw std::invalid_argument("latent regularizer anchor has the wrong dimension");
    }
    Tensor anchor(latent->shape(), latent_reference_);
    Tensor value = sum(square(*latent - anchor)) * 0.5;
    out.total = out.total + value * options_.latent_weight;
    out.terms.push_back({"latent", options_.latent_weight, value});
  }

  NoGradScope no_grad;
  const CircleValues c = circles ? circles->value() : estimate_circles(image, m, options_.circles).value();
  out.measured.pupil_radius = c.pupil_radius;
  out.measured.iris_radius = c.iris_radius;
  out.measured.pupil_iris_ratio = 100.0 * c.pupil_radius / (c.iris_radius + 1e-6);
  out.measured.sharpness = sharpness ? *sharpness : sharpness_score(image, m, options_.sharpness).item();
  out.measured.eyelid_opening = opening ? *opening : eyelid_opening(m, options_.eyelid_beta).item();
  return out;
}

LossEvaluation CompositeLoss::evaluate(const Generator& generator, const Tensor& latent, LatentSpace space) const {
  return evaluate(generator.decode(latent, space), &latent);
}

}  // namespace irisgrad
