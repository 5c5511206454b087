#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "irisgrad/attributes.hpp"
#include "irisgrad/decoders.hpp"

namespace irisgrad {

// Raised for non-finite gradients or updates.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double l2_norm(std::span<const double> v);

// Rescales g to max_norm when its L2 norm is larger.
std::vector<double> clip_grad_norm(std::vector<double> g, double max_norm);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update of z in place.
void adam_step(std::vector<double>& z, std::span<const double> g, AdamState& state, double lr);
// Decoupled weight decay z *= (1 - lr * decay), then the Adam update.
void adamw_step(std::vector<double>& z, std::span<const double> g, AdamState& state, double lr, double decay);

enum class OptimizerKind { automatic, adam, adamw };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct StopTolerances {
  double radius = 2.0;     // px
  double ratio = 2.0;      // PIR points
  double sharpness = 2.0;  // score points

  double for_kind(AttributeKind kind) const;
};

struct TraversalConfig {
  double learning_rate = 0.03;
  // automatic: Adam when an identity term is present, AdamW otherwise.
  OptimizerKind optimizer = OptimizerKind::automatic;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::size_t max_iterations = 500;
  StopTolerances tolerances{};
  LatentSpace space = LatentSpace::Z;
  // Latent snapshot every this many iterations; 0 disables snapshots.
  std::size_t snapshot_stride = 50;

  void validate() const;
  OptimizerKind resolve(bool has_identity) const;
};

enum class TraversalStatus { converged, max_iters, diverged };
std::string to_string(TraversalStatus status);

struct IterationRow {
  std::size_t iteration = 0;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> terms;
  Measurements measured;
  double grad_norm = 0.0;          // before clipping
  double clipped_grad_norm = 0.0;  // what the optimizer saw
  std::optional<std::vector<double>> latent;  // snapshot
};

struct TrajectoryRecord {
  std::vector<IterationRow> rows;
  TraversalStatus status = TraversalStatus::max_iters;
  std::size_t best_iteration = 0;
  OptimizerKind optimizer = OptimizerKind::adamw;
  std::string message;

  // One JSON object per iteration, then {"summary": {...}}.
  void write_jsonl(std::ostream& os) const;
};

struct TraversalResult {
  LatentCode initial;
  LatentCode best;
  Tensor initial_image;
  Tensor best_image;
  Measurements initial_measured;
  Measurements best_measured;
  TrajectoryRecord trajectory;
};

// Minimizes the composite loss over the latent with clipped Adam/AdamW
// steps. Stops once every targeted attribute is within tolerance and
// returns the lowest-loss iterate seen.
TraversalResult traverse(const LatentCode& z0, const std::vector<AttributeSpec>& specs, const Generator& generator,
                         const TraversalConfig& config, const LossOptions& options = {});

struct InversionConfig {
  TraversalConfig optimizer = [] {
    TraversalConfig c;
    c.max_iterations = 2000;
    return c;
  }();
  // Stop once the pixel MSE drops below this.
  double stop_mse = 1e-4;
  // Seed of the random starting latent.
  std::uint64_t seed = 0;
  // Start here instead of a random draw.
  std::optional<std::vector<double>> start;
};

struct InversionResult {
  LatentCode latent;
  double mse = 0.0;
  std::size_t iterations = 0;
  std::vector<double> mse_history;
};

// Finds z with G(z) close to target in mean squared pixel error.
InversionResult invert(const Tensor& target, const Generator& generator, const InversionConfig& config);

}  // namespace irisgrad
