#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>

#include "irisgrad/attributes.hpp"
#include "irisgrad/identity.hpp"
#include "irisgrad/ops.hpp"
#include "support.hpp"

using namespace irisgrad;

namespace {

// Dense Gabor kernel built directly: the carrier axis gets a zero-mean,
// unit-norm windowed cosine/sine, the other axis a unit-sum Gaussian.
std::vector<double> gabor_oracle(const GaborSpec& s, std::size_t n) {
  const double c = static_cast<double>(n / 2);
  std::vector<double> carrier(n), env(n);
  double mean = 0.0, env_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) - c;
    const double w = std::exp(-t * t / (2 * s.sigma * s.sigma));
    const double ph = 2 * std::numbers::pi * t / s.wavelength;
    carrier[i] = w * (s.odd ? std::sin(ph) : std::cos(ph));
    env[i] = w;
    mean += carrier[i] / static_cast<double>(n);
    env_total += w;
  }
  double norm = 0.0;
  for (auto& v : carrier) norm += (v - mean) * (v - mean);
  norm = std::sqrt(norm);
  std::vector<double> k(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const bool angular = s.orientation == GaborOrientation::angular;
      const double along = angular ? carrier[x] : carrier[y];
      const double across = angular ? env[y] : env[x];
      k[y * n + x] = (along - mean) / norm * across / env_total;
    }
  return k;
}

IrisCode random_code(std::size_t f, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  IrisCode code{f, rows, cols, {}, {}};
  const auto u = support::uniform(code.size(), seed, 0.0, 1.0);
  for (std::size_t i = 0; i < code.size(); ++i) {
    code.bits.push_back(u[i] > 0.5 ? 1 : 0);
    code.valid.push_back(1);
  }
  return code;
}

IrisCode shifted(const IrisCode& a, long s) {
  IrisCode b = a;
  const long cols = static_cast<long>(a.cols);
  for (std::size_t f = 0; f < a.filters; ++f)
    for (std::size_t r = 0; r < a.rows; ++r)
      for (long c = 0; c < cols; ++c) {
        const std::size_t base = (f * a.rows + r) * a.cols;
        b.bits[base + static_cast<std::size_t>(((c + s) % cols + cols) % cols)] = a.bits[base + static_cast<std::size_t>(c)];
      }
  return b;
}

Generator generator() { return Generator(std::make_shared<ProceduralDecoder>(ProceduralConfig{})); }

}  // namespace

TEST_CASE("bank layouts") {
  const auto loss = GaborBank::loss_bank();
  CHECK(loss.filters() == 6);
  for (const auto& s : loss.specs()) {
    CHECK(s.sigma == 3.0);
    CHECK_FALSE(s.odd);
  }
  const auto eval = GaborBank::evaluation_bank();
  CHECK(eval.filters() == 4);
  for (const auto& s : eval.specs()) CHECK(s.orientation == GaborOrientation::angular);
  CHECK(loss.fingerprint() != eval.fingerprint());
  CHECK(loss.fingerprint() == GaborBank::loss_bank().fingerprint());
  CHECK_THROWS(GaborBank({}, 15));
  CHECK_THROWS(GaborBank({{8.0, 2.0, GaborOrientation::angular}}, 14));
}

TEST_CASE("kernels match the closed form and carry no DC") {
  for (const auto& bank : {GaborBank::loss_bank(), GaborBank::evaluation_bank()}) {
    for (std::size_t i = 0; i < bank.filters(); ++i) {
      const auto k = bank.dense_kernel(i);
      const auto ref = gabor_oracle(bank.specs()[i], bank.kernel_size());
      double total = 0.0;
      for (std::size_t j = 0; j < k.size(); ++j) {
        CHECK(k[j] == doctest::Approx(ref[j]).epsilon(1e-12));
        total += k[j];
      }
      CHECK(std::abs(total) < 1e-12);
    }
  }
}

TEST_CASE("bank responses equal dense reflect-padded filtering") {
  const auto bank = GaborBank::loss_bank();
  const Tensor polar = support::random_tensor({20, 40}, 3);
  const Tensor r = bank.respond(polar);
  REQUIRE(r.shape() == Shape{6, 20, 40});
  const std::vector<double> x(polar.values().begin(), polar.values().end());
  for (std::size_t f = 0; f < 6; ++f) {
    const auto y = support::naive_conv(x, 1, 20, 40, bank.dense_kernel(f), 1, 15, 15, 1, 7, 7, true);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(r.at(f * 800 + i) == doctest::Approx(y[i]).epsilon(1e-10));
  }
  CHECK_THROWS(bank.respond(Tensor::zeros({6, 40})));
}

TEST_CASE("identity loss is the mean absolute feature difference") {
  const auto bank = GaborBank::loss_bank();
  const IdentityFeatures a{support::random_tensor({6, 4, 5}, 1), bank.fingerprint()};
  const IdentityFeatures b{support::random_tensor({6, 4, 5}, 2), bank.fingerprint()};
  double expect = 0.0;
  for (std::size_t i = 0; i < 120; ++i) expect += std::abs(a.responses.at(i) - b.responses.at(i)) / 120.0;
  CHECK(loss_identity(a, b).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss_identity(a, a).item() == 0.0);
  CHECK_THROWS(loss_identity(a, {b.responses, "other"}));
  CHECK_THROWS(loss_identity(a, {support::random_tensor({6, 4, 4}, 2), bank.fingerprint()}));
}

TEST_CASE("phi_id works on 8-bit intensities") {
  const auto gen = generator();
  const Tensor img = gen.render(LatentCode::sample(32, 1)).tensor();
  const auto c = estimate_circles(img, soft_mask(img));
  const auto bank = GaborBank::loss_bank();
  const auto f = phi_id(img, c, bank);
  CHECK(f.responses.shape() == Shape{6, kPolarRows, kPolarCols});
  const Tensor direct = bank.respond(normalize(img, c).values);
  for (std::size_t i = 0; i < direct.size(); i += 997) CHECK(f.responses.at(i) == doctest::Approx(255.0 * direct.at(i)));
}

TEST_CASE("codes are response signs inside a border") {
  Tensor r({1, 20, 30}, support::uniform(600, 4));
  const auto code = iris_code(r);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 30; ++j) {
      const std::size_t k = i * 30 + j;
      CHECK(code.bits[k] == (r.at(k) > 0.0 ? 1 : 0));
      const bool inside = i >= 7 && i < 13 && j >= 7 && j < 23;
      CHECK(code.valid[k] == (inside ? 1 : 0));
    }
  CHECK_THROWS(iris_code(Tensor::zeros({1, 14, 30})));
}

TEST_CASE("hamming distance with rotation search") {
  const auto a = random_code(2, 4, 64, 1);
  CHECK(hamming(a, a) == 0.0);
  const auto rot = shifted(a, 5);
  CHECK(hamming(a, rot, 0) > 0.3);
  CHECK(hamming(a, rot, 5) == 0.0);
  CHECK(hamming(a, shifted(a, -9), 16) == 0.0);

  auto flip = a;
  for (auto& b : flip.bits) b ^= 1;
  CHECK(hamming(a, flip, 0) == 1.0);

  const auto other = random_code(2, 4, 64, 2);
  CHECK(hamming(a, other, 0) == doctest::Approx(0.5).epsilon(0.15));
  CHECK(hamming(a, other, 16) <= hamming(a, other, 0));

  // Only jointly valid bits count.
  auto masked = a;
  auto changed = a;
  for (std::size_t i = 0; i < a.size() / 2; ++i) {
    masked.valid[i] = 0;
    changed.bits[i] ^= 1;
  }
  CHECK(hamming(masked, changed, 0) == 0.0);

  CHECK_THROWS(hamming(a, random_code(2, 4, 32, 1)));
  auto none = a;
  for (auto& v : none.valid) v = 0;
  CHECK_THROWS(hamming(none, a));
}

TEST_CASE("iris code serialization") {
  const auto code = random_code(3, 5, 7, 9);
  auto with_mask = code;
  with_mask.valid[4] = 0;
  const auto bytes = encode_iris_code(with_mask);
  const std::size_t packed = (105 + 7) / 8;
  REQUIRE(bytes.size() == 8 + 2 * packed);
  CHECK(bytes[0] == 5);
  CHECK(bytes[1] == 0);
  CHECK(bytes[2] == 7);
  CHECK(bytes[4] == 3);
  CHECK(bytes[6] == 1);
  // LSB-first packing of the first eight bits.
  unsigned first = 0;
  for (unsigned i = 0; i < 8; ++i) first |= static_cast<unsigned>(with_mask.bits[i]) << i;
  CHECK(bytes[8] == first);

  const auto back = decode_iris_code(bytes);
  CHECK(back.bits == with_mask.bits);
  CHECK(back.valid == with_mask.valid);
  CHECK(back.rows == 5);

  const auto path = std::filesystem::temp_directory_path() / "irisgrad_code.irc";
  write_iris_code(with_mask, path);
  CHECK(read_iris_code(path).bits == with_mask.bits);

  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS(decode_iris_code(bad));
  bad = bytes;
  bad[6] = 2;
  CHECK_THROWS(decode_iris_code(bad));
}

TEST_CASE("renders of the same eye match better than different eyes") {
  const auto gen = generator();
  const auto bank = GaborBank::evaluation_bank();
  auto code_of = [&](const LatentCode& z) {
    const Tensor img = gen.render(z).tensor();
    return iris_code(img, estimate_circles(img, soft_mask(img)), bank);
  };
  double genuine = 0.0, impostor = 1.0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto z = LatentCode::sample(32, seed);
    const auto a = code_of(z);
    z.values[procedural_latent::pupil_radius] += 0.4;  // same texture, dilated pupil
    genuine = std::max(genuine, hamming(a, code_of(z)));
    impostor = std::min(impostor, hamming(a, code_of(LatentCode::sample(32, seed + 100))));
  }
  CHECK(genuine < impostor);
  CHECK(impostor > 0.25);
}

TEST_CASE("texture energy grows with texture gain") {
  const auto gen = generator();
  const auto bank = GaborBank::evaluation_bank();
  auto z = LatentCode::sample(32, 3);
  auto energy = [&](double gain) {
    z.values[procedural_latent::texture_gain] = gain;
    const Tensor img = gen.render(z).tensor();
    return texture_energy(img, estimate_circles(img, soft_mask(img)), bank);
  };
  CHECK(energy(-4.0) < energy(4.0));
  CHECK(energy(0.0) > 0.0);
}

TEST_CASE("independent identities disagree on about half the bits") {
  const auto gen = generator();
  const auto bank = GaborBank::evaluation_bank();
  auto code_of = [&](std::uint64_t seed) {
    const Tensor img = gen.render(LatentCode::sample(32, seed)).tensor();
    return iris_code(img, estimate_circles(img, soft_mask(img)), bank);
  };
  double total = 0.0;
  for (std::uint64_t pair = 0; pair < 20; ++pair) total += hamming(code_of(200 + 2 * pair), code_of(201 + 2 * pair), 0);
  CHECK(total / 20.0 == doctest::Approx(0.5).epsilon(0.2));
}
