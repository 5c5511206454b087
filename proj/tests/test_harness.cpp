#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "irisgrad/harness.hpp"

using namespace irisgrad;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("irisgrad_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// U counted pair by pair: wins of b over a, ties count half.
double pairwise_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

RunConfig tiny_matrix() {
  RunConfig c = parse_config(R"({
    "resolution": "64x48",
    "decoder": {"latent_dim": 8},
    "traversal": {"max_iterations": 15},
    "matrix": {"seeds": [1, 2], "attributes": ["pupil_radius"], "directions": ["increase"],
               "targets": [0.2], "cell_artifacts": false}
  })");
  return c;
}

}  // namespace

TEST_CASE("default config") {
  const RunConfig c = parse_config("{}");
  CHECK(c.size.width == 160);
  CHECK(c.size.height == 120);
  CHECK(c.decoder.kind == "procedural");
  CHECK(c.decoder.latent_dim == 32);
  CHECK(c.traversal.learning_rate == 0.03);
  CHECK(c.traversal.max_iterations == 500);
  CHECK(c.workers == 1);
  CHECK(c.matrix.identity_weight == 1.0);
}

TEST_CASE("config fields are read") {
  const RunConfig c = parse_config(R"({
    "resolution": "640x480", "seed": 9, "space": "W",
    "decoder": {"kind": "conv", "seed": 4, "latent_dim": 16},
    "attributes": [{"kind": "pupil_radius", "relative": 0.25}, {"kind": "identity_hold", "weight": 2}],
    "traversal": {"learning_rate": 0.01, "optimizer": "adam", "tolerances": {"radius": 1.5}},
    "loss": {"power_scale": 2e6},
    "matrix": {"targets": [0.1], "identity_weight": 4},
    "workers": 3
  })");
  CHECK(c.size.width == 640);
  CHECK(c.seed == 9);
  CHECK(c.traversal.space == LatentSpace::W);
  CHECK(c.decoder.kind == "conv");
  REQUIRE(c.attributes.size() == 2);
  CHECK(*c.attributes[0].relative == 0.25);
  CHECK_FALSE(c.attributes[0].target);
  CHECK(c.attributes[1].weight == 2.0);
  CHECK(c.traversal.optimizer == OptimizerKind::adam);
  CHECK(c.traversal.tolerances.radius == 1.5);
  CHECK(c.traversal.tolerances.ratio == 2.0);
  CHECK(c.loss.sharpness.power_scale == 2e6);
  CHECK(c.matrix.targets == std::vector<double>{0.1});
  CHECK(c.matrix.identity_weight == 4.0);
  CHECK(c.workers == 3);
}

TEST_CASE("bad configs are rejected with context") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text, "run.json");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("<accepted>");
  };
  const auto syntax = message("{\n  \"seed\": 1,\n  \"workers\": ,\n}");
  CHECK(syntax.find("line 3") != std::string::npos);
  CHECK(syntax.find("\"workers\": ,") != std::string::npos);

  CHECK(message(R"({"sede": 1})").find("unknown key run.json.sede") != std::string::npos);
  CHECK(message(R"({"traversal": {"tolerances": {"radus": 1}}})").find("radus") != std::string::npos);
  CHECK(message(R"({"seed": "one"})").find("wrong type") != std::string::npos);
  CHECK(message(R"({"resolution": "640by480"})").find("resolution") != std::string::npos);
  CHECK(message(R"({"attributes": [{"kind": "pupil_radius"}]})").find("exactly one") != std::string::npos);
  CHECK(message(R"({"attributes": [{"kind": "mask_hold", "target": 1}]})").find("no target") != std::string::npos);
  CHECK(message(R"({"attributes": [{"kind": "eyebrow", "target": 1}]})").find("attributes[0].kind") !=
        std::string::npos);
  CHECK(message(R"({"attributes": [{"kind": "mask_hold"}, {"kind": "mask_hold"}]})").find("duplicate") !=
        std::string::npos);
  CHECK(message(R"({"traversal": {"learning_rate": -1}})") != "<accepted>");
  CHECK(message(R"({"matrix": {"directions": ["sideways"]}})").find("sideways") != std::string::npos);
  CHECK(message(R"({"workers": 0})").find("workers") != std::string::npos);
  CHECK(message(R"({"space": "W", "decoder": {"mapping": false}})").find("mapping") != std::string::npos);
  CHECK(message(R"({"decoder": {"kind": "gan"}})").find("gan") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/run.json"), ConfigError);
}

TEST_CASE("the default plan is 80 cells in a fixed order") {
  const auto cells = plan_cells(MatrixPlan{});
  REQUIRE(cells.size() == 80);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i].index == i);
    CHECK(cells[i].seed == 1 + i / 16);
    CHECK(cells[i].attribute == (i % 16 < 8 ? AttributeKind::pupil_radius : AttributeKind::iris_radius));
    CHECK(cells[i].direction == (i % 8 < 4 ? "decrease" : "increase"));
    CHECK(cells[i].relative == (i % 4 < 2 ? 0.2 : 0.4));
    CHECK(cells[i].identity == (i % 2 == 1));
    CHECK(cells[i].space == LatentSpace::Z);
  }
  MatrixPlan holds;
  holds.seeds = {7};
  holds.attributes = {AttributeKind::eyelid_hold};
  const auto h = plan_cells(holds);
  REQUIRE(h.size() == 2);
  CHECK(h[0].direction == "hold");
  CHECK(h[1].identity);
  holds.spaces = {LatentSpace::Z, LatentSpace::W};
  CHECK(plan_cells(holds)[2].space == LatentSpace::W);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK_THROWS(median({}));
}

TEST_CASE("rank-sum test") {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  auto r = rank_sum_less(a, b);
  CHECK(r.u == pairwise_u(a, b));
  // Reference values from an asymptotic Mann-Whitney implementation with
  // continuity and tie correction.
  CHECK(r.p_less == doctest::Approx(0.04042779918502612).epsilon(1e-10));
  CHECK(r.z == doctest::Approx(-4.0 / std::sqrt(5.25)));

  const std::vector<double> c{0.1, 0.3, 0.3, 0.2, 0.5}, d{0.3, 0.4, 0.6, 0.6, 0.7, 0.2};
  r = rank_sum_less(c, d);
  CHECK(r.u == pairwise_u(c, d));
  CHECK(r.u == 6.5);
  CHECK(r.p_less == doctest::Approx(0.06931293993946382).epsilon(1e-10));

  // Swapping the samples flips the direction of the evidence.
  CHECK(rank_sum_less(b, a).p_less > 0.9);
  CHECK(rank_sum_less({1, 1}, {1, 1}).p_less == 1.0);
  CHECK_THROWS(rank_sum_less({}, {1.0}));
}

TEST_CASE("score csv layout") {
  ScoreRow r;
  r.cell = {0, 3, AttributeKind::pupil_radius, "increase", 0.2, true, LatentSpace::W};
  r.target = 12.5;
  r.start_value = 1.0 / 3.0;
  r.final_value = 12.25;
  r.iterations = 41;
  r.status = TraversalStatus::converged;
  r.hd = 0.125;
  r.texture_energy = 2.5;
  ScoreRow hold;
  hold.cell = {1, 3, AttributeKind::mask_hold, "hold", 0.0, false, LatentSpace::Z};
  hold.iterations = 1;
  hold.status = TraversalStatus::converged;
  CHECK(scores_csv({r, hold}, false) ==
        "seed,attribute,direction,target,start_value,identity_loss,space,final_value,iterations,status,hd\n"
        "3,pupil_radius,increase,12.5,0.333333333,on,W,12.25,41,converged,0.125\n"
        "3,mask_hold,hold,,,off,Z,,1,converged,0\n");
  CHECK(scores_csv({r}, true).find(",hd,texture_energy\n") != std::string::npos);
  CHECK(scores_csv({r}, true).find(",0.125,2.5\n") != std::string::npos);
}

TEST_CASE("latent files round-trip") {
  const auto dir = scratch("latent");
  fs::create_directories(dir);
  auto z = LatentCode::sample(8, 5);
  z.space = LatentSpace::W;
  write_latent(z, dir / "z.json");
  const auto back = read_latent(dir / "z.json");
  CHECK(back.values == z.values);
  CHECK(back.space == LatentSpace::W);
  CHECK(back.seed == 5);
  std::ofstream(dir / "bad.json") << "{\"values\": [1]}";
  CHECK_THROWS(read_latent(dir / "bad.json"));
  CHECK_THROWS(read_latent(dir / "missing.json"));
}

TEST_CASE("start latents follow the traversal space") {
  RunConfig c = parse_config(R"({"decoder": {"latent_dim": 8}, "resolution": "64x48"})");
  const Generator gen = make_generator(c);
  const auto z = start_latent(c, gen, 4);
  CHECK(z.space == LatentSpace::Z);
  CHECK(z.values == LatentCode::sample(8, 4).values);
  c.traversal.space = LatentSpace::W;
  const auto w = start_latent(c, gen, 4);
  CHECK(w.space == LatentSpace::W);
  CHECK(w.values == gen.map(z).values);
}

TEST_CASE("a small matrix writes deterministic scores") {
  const RunConfig c = tiny_matrix();
  const auto a = scratch("matrix_a"), b = scratch("matrix_b");
  const auto r = run_matrix(c, a);
  REQUIRE(r.rows.size() == 4);
  REQUIRE(r.arms.size() == 2);
  CHECK(r.arms[0].label == "no_identity");
  CHECK(r.arms[1].cells == 2);
  CHECK(r.identity_test.has_value());
  for (const auto& row : r.rows) {
    CHECK(row.hd >= 0.0);
    CHECK(row.hd <= 1.0);
    CHECK(row.iterations >= 1);
    CHECK(*row.target == doctest::Approx(*row.start_value * 1.2));
  }
  CHECK(fs::exists(a / "summary.json"));

  RunConfig parallel = c;
  parallel.workers = 2;
  run_matrix(parallel, b);
  CHECK(slurp(a / "scores.csv") == slurp(b / "scores.csv"));
}

TEST_CASE("single runs, generation and inversion write their artifacts") {
  RunConfig c = parse_config(R"({
    "resolution": "64x48", "decoder": {"latent_dim": 8, "mapping": false}, "seed": 2,
    "attributes": [{"kind": "pupil_radius", "relative": 0.25}],
    "traversal": {"max_iterations": 40},
    "inversion": {"max_iterations": 30}
  })");
  const auto dir = scratch("single");
  const auto s = run_single(c, dir / "run");
  for (const char* f : {"initial.pgm", "final.png", "trajectory.jsonl", "summary.json", "latent.json"})
    CHECK(fs::exists(dir / "run" / f));
  CHECK(s.specs[0].target.has_value());

  const auto g = run_generate(c, dir / "gen");
  for (const char* f : {"image.pgm", "image.png", "mask.pgm", "code.irc", "latent.json"}) CHECK(fs::exists(dir / "gen" / f));
  CHECK(g.latent.values == LatentCode::sample(8, 2).values);

  c.inversion.image = dir / "gen" / "image.pgm";
  const auto inv = run_invert(c, dir / "inv");
  CHECK(inv.iterations <= 30);
  CHECK(fs::exists(dir / "inv" / "reconstruction.pgm"));
  CHECK(fs::exists(dir / "inv" / "inversion.jsonl"));

  c.attributes.clear();
  CHECK_THROWS_AS(run_single(c, dir / "none"), ConfigError);
  c.inversion.image.reset();
  CHECK_THROWS_AS(run_invert(c, dir / "none"), ConfigError);
}

TEST_CASE("shipped presets parse") {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(IRISGRAD_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().filename().string());
    CHECK_NOTHROW(load_config(e.path()));
    ++n;
  }
  CHECK(n >= 3);
  const auto desk = load_config(fs::path(IRISGRAD_CONFIG_DIR) / "desk_matrix.json");
  CHECK(plan_cells(desk.matrix).size() == 80);
  const auto full = load_config(fs::path(IRISGRAD_CONFIG_DIR) / "full_matrix_640x480.json");
  CHECK(full.size.width == 640);
  CHECK(plan_cells(full.matrix).size() == 800);
}
