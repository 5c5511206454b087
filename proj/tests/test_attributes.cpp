#include "doctest.h"

#include <cmath>

#include "irisgrad/attributes.hpp"
#include "irisgrad/gradcheck.hpp"
#include "irisgrad/ops.hpp"
#include "support.hpp"

using namespace irisgrad;

namespace {

// Unit-sum Gaussian window minus a wider one, scaled.
std::vector<double> dog(std::size_t n, double s1, double s2, double gain) {
  std::vector<double> g1(n * n), g2(n * n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double t1 = 0.0, t2 = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double r2 = (i - c) * (i - c) + (j - c) * (j - c);
      t1 += g1[i * n + j] = std::exp(-r2 / (2 * s1 * s1));
      t2 += g2[i * n + j] = std::exp(-r2 / (2 * s2 * s2));
    }
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n * n; ++i) k[i] = gain * (g1[i] / t1 - g2[i] / t2);
  return k;
}

// The sharpness score written out with the naive convolution.
double sharpness_oracle(const Tensor& image, const Tensor& mask) {
  const std::size_t H = image.dim(0), W = image.dim(1);
  std::vector<double> x(image.values().begin(), image.values().end());
  for (auto& v : x) v *= 255.0;
  const auto y = support::naive_conv(x, 1, H, W, dog(9, 1.0, 2.0, 400.0), 1, 9, 9, 1, 4, 4, true);
  double num = 0.0, area = 0.0;
  for (std::size_t i = 0; i < H * W; ++i) {
    num += y[i] * y[i] * mask.at(i);
    area += mask.at(i);
  }
  const double p = num / area, c = 1.8e6;
  return 100.0 * p * p / (p * p + c * c);
}

Generator small_generator(std::size_t w = 160, std::size_t h = 120, std::size_t d = 32) {
  ProceduralConfig cfg;
  cfg.size = {w, h};
  cfg.latent_dim = d;
  return Generator(std::make_shared<ProceduralDecoder>(cfg));
}

}  // namespace

TEST_CASE("attribute kinds round-trip through their names") {
  for (auto k : {AttributeKind::sharpness, AttributeKind::pupil_radius, AttributeKind::iris_radius,
                 AttributeKind::pupil_iris_ratio, AttributeKind::eyelid_hold, AttributeKind::mask_hold,
                 AttributeKind::identity_hold})
    CHECK(parse_attribute_kind(to_string(k)) == k);
  CHECK_THROWS(parse_attribute_kind("iris_colour"));
  CHECK(is_hold(AttributeKind::mask_hold));
  CHECK_FALSE(is_hold(AttributeKind::pupil_iris_ratio));
}

TEST_CASE("attribute specs validate targets and weights") {
  CHECK_NOTHROW(AttributeSpec{AttributeKind::pupil_radius, 12.0}.validate());
  CHECK_THROWS(AttributeSpec{AttributeKind::pupil_radius, std::nullopt}.validate());
  CHECK_THROWS(AttributeSpec{AttributeKind::eyelid_hold, 3.0}.validate());
  CHECK_THROWS(AttributeSpec{AttributeKind::sharpness, 50.0, -1.0}.validate());
  CHECK_THROWS(AttributeSpec{AttributeKind::sharpness, NAN}.validate());
}

TEST_CASE("the sharpness kernel is a zero-sum difference of Gaussians") {
  const auto k = sharpness_kernel();
  const auto ref = dog(9, 1.0, 2.0, 400.0);
  REQUIRE(k.size() == 81);
  double total = 0.0;
  for (std::size_t i = 0; i < 81; ++i) {
    CHECK(k[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(k[i] == doctest::Approx(k[80 - i]).epsilon(1e-12));
    total += k[i];
  }
  CHECK(std::abs(total) < 1e-12);
  SharpnessConstants even;
  even.size = 8;
  CHECK_THROWS(sharpness_kernel(even));
}

TEST_CASE("sharpness score matches a direct evaluation") {
  const auto gen = small_generator();
  for (std::uint64_t seed : {1, 2, 3}) {
    const Tensor img = gen.render(LatentCode::sample(32, seed)).tensor();
    const Tensor m = soft_mask(img);
    CHECK(sharpness_score(img, m).item() == doctest::Approx(sharpness_oracle(img, m)).epsilon(1e-9));
  }
}

TEST_CASE("sharpness score bounds") {
  const Tensor m = Tensor::ones({40, 50});
  CHECK(sharpness_score(Tensor::full({40, 50}, 0.4), m).item() < 1e-12);
  const Tensor noise = support::random_tensor({40, 50}, 4, 0.0, 1.0);
  const double s = sharpness_score(noise, m).item();
  CHECK(s > 90.0);
  CHECK(s < 100.0);
  CHECK_THROWS_AS(sharpness_score(noise, Tensor::zeros({40, 50})), DegenerateSegmentation);
}

TEST_CASE("blurring lowers the sharpness score") {
  const auto gen = small_generator();
  namespace L = procedural_latent;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto z = LatentCode::sample(32, seed);
    z.values[L::blur_mix] = -6.0;
    const Tensor sharp = gen.render(z).tensor();
    z.values[L::blur_mix] = 6.0;
    const Tensor blurred = gen.render(z).tensor();
    CHECK(sharpness_score(sharp, soft_mask(sharp)).item() > sharpness_score(blurred, soft_mask(blurred)).item());
  }
}

TEST_CASE("no gradient reaches the sharpness mask") {
  ComputationRecord rec;
  RecordScope scope(rec);
  Tensor img = support::random_tensor({20, 20}, 5, 0.3, 0.7);
  Tensor mask = support::random_tensor({20, 20}, 6, 0.1, 1.0).set_requires_grad(true);
  backward(sharpness_score(img, mask));
  CHECK_FALSE(mask.has_grad());
}

TEST_CASE("mask loss is the clipped mean binary cross-entropy") {
  Tensor m({1, 4}, {0.9, 0.2, 0.0, 1.0});
  Tensor t({1, 4}, {1.0, 0.0, 1.0, 1.0});
  const double eps = 1e-7;
  const double expect =
      -(std::log(0.9) + std::log(0.8) + std::log(eps) + std::log(1.0 - eps)) / 4.0;
  CHECK(loss_mask(m, t).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss_mask(t, t).item() < 1e-6);
  CHECK_THROWS(loss_mask(m, Tensor::ones({2, 2})));
}

TEST_CASE("radius, ratio and eyelid losses are absolute errors") {
  const auto c = CircleParams::constant({80.0, 60.0, 12.0, 40.0});
  CHECK(pupil_iris_ratio(c).item() == doctest::Approx(100.0 * 12.0 / (40.0 + 1e-6)));
  CHECK(loss_pupil(c, 15.0).item() == doctest::Approx(3.0));
  CHECK(loss_iris(c, 35.5).item() == doctest::Approx(4.5));
  CHECK(loss_pir(c, 20.0).item() == doctest::Approx(10.0).epsilon(1e-6));
  std::vector<double> v(300, 0.0);
  for (std::size_t j = 0; j < 30; ++j) v[4 * 30 + j] = v[5 * 30 + j] = 1.0;
  const Tensor mask({10, 30}, v);
  CHECK(loss_eyelid(mask, 1.0).item() == doctest::Approx(2 * std::tanh(3.0) - 1.0));
}

TEST_CASE("composite loss construction rules") {
  const Tensor x0 = small_generator().render(LatentCode::sample(32, 1)).tensor();
  CHECK_THROWS(CompositeLoss({}, x0));
  CHECK_THROWS(CompositeLoss({{AttributeKind::pupil_radius, 10.0}, {AttributeKind::pupil_radius, 12.0}}, x0));
  CHECK_THROWS(CompositeLoss({{AttributeKind::mask_hold, std::nullopt}}, std::nullopt));
  CHECK_NOTHROW(CompositeLoss({{AttributeKind::sharpness, 40.0}}, std::nullopt));
  CompositeLoss id({{AttributeKind::identity_hold, std::nullopt}}, x0);
  CHECK(id.has_identity());
  CHECK_FALSE(id.has_targets());
  REQUIRE(id.reference());
  CHECK(id.reference()->identity);
}

TEST_CASE("the composite total is the weighted sum of its terms") {
  const auto gen = small_generator();
  const Tensor x0 = gen.render(LatentCode::sample(32, 2)).tensor();
  const Tensor x1 = gen.render(LatentCode::sample(32, 3)).tensor();
  CompositeLoss loss({{AttributeKind::pupil_radius, 14.0, 1.0},
                      {AttributeKind::sharpness, 30.0, 0.5},
                      {AttributeKind::eyelid_hold, std::nullopt, 2.0},
                      {AttributeKind::mask_hold, std::nullopt, 3.0},
                      {AttributeKind::identity_hold, std::nullopt, 0.25}},
                     x0);
  const auto ev = loss.evaluate(x1);
  double total = 0.0;
  for (const auto& t : ev.terms) total += t.weight * t.value.item();
  CHECK(ev.total.item() == doctest::Approx(total).epsilon(1e-12));
  REQUIRE(ev.terms.size() == 5);
  CHECK(ev.terms[0].value.item() == doctest::Approx(std::abs(ev.measured.pupil_radius - 14.0)));
  CHECK(ev.terms[1].value.item() == doctest::Approx(std::abs(ev.measured.sharpness - 30.0)));
  const auto m0 = measure(x0);
  CHECK(ev.terms[2].value.item() == doctest::Approx(std::abs(ev.measured.eyelid_opening - m0.eyelid_opening)));

  // At the reference image every hold term vanishes (mask BCE up to clipping).
  const auto same = loss.evaluate(x0);
  CHECK(same.terms[2].value.item() == doctest::Approx(0.0));
  CHECK(same.terms[4].value.item() == doctest::Approx(0.0));
}

TEST_CASE("measurements agree with the primitives") {
  const Tensor img = small_generator().render(LatentCode::sample(32, 4)).tensor();
  const auto m = measure(img);
  const Tensor mask = soft_mask(img);
  const auto c = estimate_circles(img, mask).value();
  CHECK(m.pupil_radius == c.pupil_radius);
  CHECK(m.iris_radius == c.iris_radius);
  CHECK(m.pupil_iris_ratio == doctest::Approx(100.0 * c.pupil_radius / c.iris_radius));
  CHECK(m.sharpness == doctest::Approx(sharpness_score(img, mask).item()));
  CHECK(m.eyelid_opening == doctest::Approx(eyelid_opening(mask).item()));
  CHECK(m.get(AttributeKind::eyelid_hold) == m.eyelid_opening);
  CHECK_THROWS(m.get(AttributeKind::mask_hold));
}

TEST_CASE("latent regulariser") {
  const auto gen = small_generator(64, 48, 8);
  const auto z0 = LatentCode::sample(8, 1);
  LossOptions opts;
  opts.latent_weight = 2.0;
  CompositeLoss loss({{AttributeKind::iris_radius, 15.0}}, std::nullopt, opts);
  loss.set_latent_reference(z0.values);
  auto z = z0.values;
  z[0] += 1.0;
  z[5] -= 2.0;
  const Tensor zt({8}, z);
  const auto ev = loss.evaluate(gen, zt, LatentSpace::Z);
  REQUIRE(ev.terms.size() == 2);
  CHECK(ev.terms[1].name == "latent");
  CHECK(ev.terms[1].value.item() == doctest::Approx(0.5 * (1.0 + 4.0)));
  CHECK_THROWS(loss.evaluate(gen.render(z0).tensor()));
}

TEST_CASE("each composite term is differentiable through the decoder") {
  const auto gen = small_generator(64, 48, 8);
  const auto z0 = LatentCode::sample(8, 6);
  const Tensor x0 = gen.render(z0).tensor();
  auto z = z0.values;
  z[0] += 0.3;
  z[3] -= 0.5;
  z[7] += 0.2;
  const Tensor zt({8}, z);
  const auto m = measure(x0);
  const std::vector<AttributeSpec> cases{{AttributeKind::pupil_radius, m.pupil_radius + 5.0},
                                         {AttributeKind::iris_radius, m.iris_radius - 5.0},
                                         {AttributeKind::pupil_iris_ratio, m.pupil_iris_ratio + 9.0},
                                         {AttributeKind::eyelid_hold, std::nullopt},
                                         {AttributeKind::mask_hold, std::nullopt},
                                         {AttributeKind::identity_hold, std::nullopt}};
  for (const auto& spec : cases) {
    CAPTURE(to_string(spec.kind));
    CompositeLoss loss({spec}, x0);
    const auto r = grad_check([&](const Tensor& t) { return loss.evaluate(gen, t, LatentSpace::Z).total; }, zt);
    CHECK(r.max_relative_error <= 1e-3);
  }
}

TEST_CASE("sharpness gradient treats the mask as a constant") {
  // Finite differences of the full score also see the mask move, which the
  // stop-gradient removes on purpose. The reference function therefore
  // freezes the mask at the evaluation point.
  const auto gen = small_generator(64, 48, 8);
  const auto z = LatentCode::sample(8, 6).tensor();
  const Tensor m0 = soft_mask(gen.render(LatentCode::sample(8, 6)).tensor());
  const double target = sharpness_score(gen.render(LatentCode::sample(8, 6)).tensor(), m0).item() + 7.0;
  const auto frozen = grad_check(
      [&](const Tensor& t) { return abs(sharpness_score(gen.generate(t), m0) - target); }, z);
  CHECK(frozen.max_relative_error <= 1e-3);

  CompositeLoss loss({{AttributeKind::sharpness, target}}, std::nullopt);
  ComputationRecord rec;
  RecordScope scope(rec);
  Tensor leaf = z.clone().set_requires_grad(true);
  backward(loss.evaluate(gen, leaf, LatentSpace::Z).total);
  for (std::size_t i = 0; i < 8; ++i) CHECK(leaf.grad()[i] == doctest::Approx(frozen.analytic[i]).epsilon(1e-9));
}
