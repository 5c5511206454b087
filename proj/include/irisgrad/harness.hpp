#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "irisgrad/attributes.hpp"
#include "irisgrad/decoders.hpp"
#include "irisgrad/image.hpp"
#include "irisgrad/traversal.hpp"

namespace irisgrad {

// Invalid or unparsable configuration; the message carries line context.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process exit codes of the command-line front end.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;  // I/O and other runtime errors
inline constexpr int config = 2;
inline constexpr int diverged = 3;
}  // namespace exit_code

struct DecoderConfig {
  std::string kind = "procedural";  // procedural | conv
  std::uint64_t seed = 1;           // weights of the mapping / conv networks
  std::size_t latent_dim = 32;
  bool mapping = true;
  std::optional<std::filesystem::path> weights;  // conv decoder weight file
};

// One attribute entry of a single run. Targets are absolute or relative to
// the start value: target = start * (1 + relative).
struct TargetSpec {
  AttributeKind kind;
  std::optional<double> target;
  std::optional<double> relative;
  double weight = 1.0;
};

struct MatrixPlan {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<AttributeKind> attributes{AttributeKind::pupil_radius, AttributeKind::iris_radius};
  std::vector<std::string> directions{"decrease", "increase"};
  // Relative step sizes; the sign comes from the direction.
  std::vector<double> targets{0.2, 0.4};
  std::vector<bool> identity_arms{false, true};
  std::vector<LatentSpace> spaces{LatentSpace::Z};
  double identity_weight = 1.0;
  bool cell_artifacts = true;
};

struct InversionSection {
  std::optional<std::filesystem::path> image;
  InversionConfig config{};
};

struct RunConfig {
  DecoderConfig decoder{};
  ImageSize size{};
  std::uint64_t seed = 1;
  std::vector<TargetSpec> attributes{};
  TraversalConfig traversal{};
  LossOptions loss{};
  MatrixPlan matrix{};
  InversionSection inversion{};
  // Latent JSON written by `invert`; replaces the seeded start.
  std::optional<std::filesystem::path> start_latent;
  std::size_t workers = 1;
};

// Parses JSON text; `source` names the input in error messages.
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

Generator make_generator(const RunConfig& config);
// Seeded start in the traversal space (Z draws are mapped for W runs).
LatentCode start_latent(const RunConfig& config, const Generator& generator, std::uint64_t seed);

void write_latent(const LatentCode& code, const std::filesystem::path& path);
LatentCode read_latent(const std::filesystem::path& path);

// Identity comparison of two images with the evaluation bank.
double comparison_score(const Tensor& a, const Tensor& b, const LossOptions& options = {});

struct Cell {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  AttributeKind attribute;
  std::string direction;  // decrease | increase | hold
  double relative = 0.0;
  bool identity = false;
  LatentSpace space = LatentSpace::Z;
};

struct ScoreRow {
  Cell cell;
  std::optional<double> target;
  std::optional<double> start_value;
  std::optional<double> final_value;
  std::size_t iterations = 0;
  TraversalStatus status = TraversalStatus::max_iters;
  double hd = 0.0;
  double texture_energy = 0.0;
  std::string message;
};

// Cells in plan order: space, seed, attribute, direction, target, arm.
std::vector<Cell> plan_cells(const MatrixPlan& plan);

struct ArmSummary {
  std::string label;
  std::size_t cells = 0;
  double mean_hd = 0.0;
  double median_hd = 0.0;
  double convergence_rate = 0.0;
};

struct RankSumResult {
  double u = 0.0;   // Mann-Whitney U of the first sample
  double z = 0.0;   // normal approximation with tie correction
  double p_less = 1.0;  // one-sided p for "first sample tends to be smaller"
};

RankSumResult rank_sum_less(const std::vector<double>& a, const std::vector<double>& b);
double median(std::vector<double> v);

struct MatrixResult {
  std::vector<ScoreRow> rows;
  std::vector<ArmSummary> arms;
  std::optional<RankSumResult> identity_test;
  bool any_diverged = false;
};

// Runs every cell (up to config.workers at a time) and writes
// scores.csv, summary.json and per-cell artifacts under `out`.
MatrixResult run_matrix(const RunConfig& config, const std::filesystem::path& out);
// Matched Z and W cells; writes paired_scores.csv and space_summary.json.
MatrixResult run_space_compare(const RunConfig& config, const std::filesystem::path& out);

// CSV with a fixed header; numbers printed with %.9g so reruns are
// byte-identical.
std::string scores_csv(const std::vector<ScoreRow>& rows, bool with_texture_energy);

struct SingleRunResult {
  TraversalResult traversal;
  double hd = 0.0;
  std::vector<AttributeSpec> specs;
};

// Writes initial/final images, trajectory.jsonl and summary.json to `out`.
SingleRunResult run_single(const RunConfig& config, const std::filesystem::path& out);

struct GenerateResult {
  LatentCode latent;
  IrisImage image;
};
// Writes image.pgm, image.png, mask.pgm, code.irc and latent.json.
GenerateResult run_generate(const RunConfig& config, const std::filesystem::path& out);

// Inverts config.inversion.image; writes latent.json, reconstruction.pgm
// and inversion.jsonl.
InversionResult run_invert(const RunConfig& config, const std::filesystem::path& out);

}  // namespace irisgrad
