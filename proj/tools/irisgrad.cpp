#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "irisgrad/harness.hpp"

using namespace irisgrad;

namespace {

struct CommonFlags {
  std::string config;
  std::string out = "out";
  std::optional<std::size_t> workers;
  std::optional<std::string> resolution;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--workers", f.workers, "concurrent traversals");
  cmd->add_option("--resolution", f.resolution, "image size as WxH");
  cmd->add_option("--seed", f.seed, "latent seed");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? parse_config("{}", "defaults") : load_config(f.config);
  if (f.workers) {
    if (*f.workers < 1) throw ConfigError("--workers must be >= 1");
    c.workers = *f.workers;
  }
  if (f.resolution) {
    try {
      c.size = parse_resolution(*f.resolution);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--resolution: ") + e.what());
    }
  }
  if (f.seed) c.seed = *f.seed;
  return c;
}

void print_arms(const MatrixResult& r) {
  for (const auto& a : r.arms)
    std::printf("%-12s cells %3zu  mean HD %.4f  median HD %.4f  converged %.1f%%\n", a.label.c_str(), a.cells,
                a.mean_hd, a.median_hd, 100.0 * a.convergence_rate);
  if (r.identity_test)
    std::printf("rank-sum (identity arm lower): U %.1f  z %.3f  p %.4g\n", r.identity_test->u, r.identity_test->z,
                r.identity_test->p_less);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute editing of synthetic iris images by latent-space traversal"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto* generate = app.add_subcommand("generate", "render the image of a seeded latent");
  auto* invert = app.add_subcommand("invert", "recover a latent for an image (inversion.image)");
  auto* traverse = app.add_subcommand("traverse", "run one attribute traversal");
  auto* matrix = app.add_subcommand("matrix", "run the with/without identity-loss matrix");
  auto* compare = app.add_subcommand("space-compare", "run matched traversals in Z and W");
  for (auto* cmd : {generate, invert, traverse, matrix, compare}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_code::ok : exit_code::config;
  }

  try {
    const RunConfig config = resolve(flags);
    if (generate->parsed()) {
      auto r = run_generate(config, flags.out);
      std::printf("wrote %s/image.pgm (%zux%zu, seed %llu)\n", flags.out.c_str(), r.image.width, r.image.height,
                  static_cast<unsigned long long>(r.latent.seed));
      return exit_code::ok;
    }
    if (invert->parsed()) {
      try {
        auto r = run_invert(config, flags.out);
        std::printf("inversion: best MSE %.3g after %zu iterations\n", r.mse, r.iterations);
      } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code::diverged;
      }
      return exit_code::ok;
    }
    if (traverse->parsed()) {
      auto r = run_single(config, flags.out);
      const auto& t = r.traversal.trajectory;
      std::printf("traverse: %s after %zu iterations (best %zu), HD %.4f\n", to_string(t.status).c_str(),
                  t.rows.size(), t.best_iteration, r.hd);
      return t.status == TraversalStatus::diverged ? exit_code::diverged : exit_code::ok;
    }
    auto r = matrix->parsed() ? run_matrix(config, flags.out) : run_space_compare(config, flags.out);
    print_arms(r);
    return r.any_diverged ? exit_code::diverged : exit_code::ok;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_code::config;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::failure;
  }
}
