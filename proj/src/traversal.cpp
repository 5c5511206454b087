#include "irisgrad/traversal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "irisgrad/ops.hpp"
#include "json.hpp"

namespace irisgrad {

namespace {

bool finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void ensure_state(AdamState& s, std::size_t n) {
  if (s.m.empty() && s.v.empty() && s.step == 0) {
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
  }
  if (s.m.size() != n || s.v.size() != n) throw std::invalid_argument("optimizer state has the wrong dimension");
}

std::vector<double> gradient_of(const Tensor& leaf) {
  if (!leaf.has_grad()) return std::vector<double>(leaf.size(), 0.0);
  return {leaf.grad().begin(), leaf.grad().end()};
}

nlohmann::json measured_json(const Measurements& m) {
  return {{"sharpness", m.sharpness},
          {"pupil_radius", m.pupil_radius},
          {"iris_radius", m.iris_radius},
          {"pupil_iris_ratio", m.pupil_iris_ratio},
          {"eyelid_opening", m.eyelid_opening}};
}

}  // namespace

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> clip_grad_norm(std::vector<double> g, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  if (!finite(g)) throw DivergenceError("diverged gradient");
  const double norm = l2_norm(g);
  if (!std::isfinite(norm)) throw DivergenceError("diverged gradient");
  if (norm > max_norm) {
    // Rounding can leave the rescaled norm an ulp above the bound.
    const std::vector<double> raw = g;
    for (double scale = max_norm / norm;; scale = std::nextafter(scale, 0.0)) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = raw[i] * scale;
      if (l2_norm(g) <= max_norm) break;
    }
  }
  return g;
}

void adam_step(std::vector<double>& z, std::span<const double> g, AdamState& s, double lr) {
  if (g.size() != z.size()) throw std::invalid_argument("gradient and latent sizes differ");
  ensure_state(s, z.size());
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  std::vector<double> next(z);
  for (std::size_t i = 0; i < z.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g[i] * g[i];
    next[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.epsilon);
  }
  if (!finite(next)) throw DivergenceError("non-finite optimizer update");
  z = std::move(next);
}

void adamw_step(std::vector<double>& z, std::span<const double> g, AdamState& s, double lr, double decay) {
  const double keep = 1.0 - lr * decay;
  for (auto& x : z) x *= keep;
  adam_step(z, g, s, lr);
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::automatic: return "auto";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "auto") return OptimizerKind::automatic;
  if (text == "adam") return OptimizerKind::adam;
  if (text == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + text + "' (use auto, adam or adamw)");
}

double StopTolerances::for_kind(AttributeKind kind) const {
  switch (kind) {
    case AttributeKind::sharpness: return sharpness;
    case AttributeKind::pupil_radius:
    case AttributeKind::iris_radius: return radius;
    case AttributeKind::pupil_iris_ratio: return ratio;
    default: throw std::invalid_argument(to_string(kind) + " has no stop tolerance");
  }
}

void TraversalConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("max iterations must be >= 1");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  for (double t : {tolerances.radius, tolerances.ratio, tolerances.sharpness})
    if (!(t > 0.0)) throw std::invalid_argument("stop tolerances must be > 0");
}

OptimizerKind TraversalConfig::resolve(bool has_identity) const {
  if (optimizer != OptimizerKind::automatic) return optimizer;
  return has_identity ? OptimizerKind::adam : OptimizerKind::adamw;
}

std::string to_string(TraversalStatus status) {
  switch (status) {
    case TraversalStatus::converged: return "converged";
    case TraversalStatus::max_iters: return "max-iters";
    case TraversalStatus::diverged: return "diverged";
  }
  return "?";
}

void TrajectoryRecord::write_jsonl(std::ostream& os) const {
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["total"] = r.total;
    nlohmann::ordered_json terms = nlohmann::ordered_json::object();
    for (const auto& [name, value] : r.terms) terms[name] = value;
    j["terms"] = terms;
    j["attributes"] = measured_json(r.measured);
    j["grad_norm"] = r.grad_norm;
    j["clipped_grad_norm"] = r.clipped_grad_norm;
    if (r.latent) j["latent"] = *r.latent;
    os << j.dump() << '\n';
  }
  nlohmann::ordered_json s;
  s["status"] = to_string(status);
  s["iterations"] = rows.size();
  s["best_iteration"] = best_iteration;
  s["optimizer"] = to_string(optimizer);
  if (!message.empty()) s["message"] = message;
  os << nlohmann::ordered_json{{"summary", s}}.dump() << '\n';
}

TraversalResult traverse(const LatentCode& z0, const std::vector<AttributeSpec>& specs, const Generator& generator,
                         const TraversalConfig& config, const LossOptions& options) {
  config.validate();
  if (z0.space != config.space) {
    throw std::invalid_argument("start latent is in " + to_string(z0.space) + " but the traversal runs in " +
                                to_string(config.space));
  }
  if (z0.dim() != generator.latent_dim()) throw std::invalid_argument("start latent has the wrong dimension");

  TraversalResult result;
  result.initial = z0;
  {
    NoGradScope no_grad;
    result.initial_image = generator.decode(z0.tensor(), config.space).detach();
  }
  auto& traj = result.trajectory;
  result.best = z0;
  result.best_image = result.initial_image;
  std::optional<CompositeLoss> built;
  try {
    built.emplace(specs, result.initial_image, options);
    result.initial_measured = measure(result.initial_image, options);
  } catch (const DegenerateSegmentation& e) {
    // Nothing to traverse from: the start image has no measurable iris.
    traj.status = TraversalStatus::diverged;
    traj.message = e.what();
    traj.optimizer = config.resolve(std::any_of(specs.begin(), specs.end(), [](const auto& s) {
      return s.kind == AttributeKind::identity_hold;
    }));
    return result;
  }
  CompositeLoss& loss = *built;
  loss.set_latent_reference(z0.values);
  traj.optimizer = config.resolve(loss.has_identity());
  AdamState state;
  std::vector<double> z = z0.values;
  std::vector<double> last_z = z;
  double best_total = std::numeric_limits<double>::infinity();
  result.best_measured = result.initial_measured;

  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    ComputationRecord record;
    RecordScope scope(record);
    Tensor latent({z.size()}, z, true);
    IterationRow row;
    row.iteration = it;
    LossEvaluation ev;
    try {
      ev = loss.evaluate(generator, latent, config.space);
    } catch (const DegenerateSegmentation& e) {
      traj.status = TraversalStatus::diverged;
      traj.message = e.what();
      break;
    }
    row.total = ev.total.item();
    if (!std::isfinite(row.total)) {
      traj.status = TraversalStatus::diverged;
      traj.message = "non-finite loss";
      break;
    }
    backward(ev.total);
    std::vector<double> g = gradient_of(latent);
    row.grad_norm = l2_norm(g);
    if (!std::isfinite(row.grad_norm)) {
      traj.status = TraversalStatus::diverged;
      traj.message = "diverged gradient";
      break;
    }
    try {
      g = clip_grad_norm(std::move(g), config.clip_norm);
    } catch (const DivergenceError& e) {
      traj.status = TraversalStatus::diverged;
      traj.message = e.what();
      break;
    }
    row.clipped_grad_norm = l2_norm(g);
    for (const auto& t : ev.terms) row.terms.emplace_back(t.name, t.value.item());
    row.measured = ev.measured;
    if (config.snapshot_stride > 0 && it % config.snapshot_stride == 0) row.latent = z;

    if (row.total < best_total) {
      best_total = row.total;
      traj.best_iteration = it;
      result.best = {z, config.space, z0.seed};
      result.best_image = ev.image.detach();
      result.best_measured = ev.measured;
    }

    bool done = true;
    for (const auto& s : specs)
      if (!is_hold(s.kind) && std::abs(ev.measured.get(s.kind) - *s.target) > config.tolerances.for_kind(s.kind))
        done = false;
    traj.rows.push_back(std::move(row));
    last_z = z;
    if (done) {
      traj.status = TraversalStatus::converged;
      break;
    }

    try {
      if (traj.optimizer == OptimizerKind::adam) {
        adam_step(z, g, state, config.learning_rate);
      } else {
        adamw_step(z, g, state, config.learning_rate, config.weight_decay);
      }
    } catch (const DivergenceError& e) {
      traj.status = TraversalStatus::diverged;
      traj.message = e.what();
      break;
    }
  }
  // The last recorded iterate always carries its latent.
  if (!traj.rows.empty() && config.snapshot_stride > 0 && !traj.rows.back().latent) traj.rows.back().latent = last_z;
  return result;
}

InversionResult invert(const Tensor& target, const Generator& generator, const InversionConfig& config) {
  const auto& oc = config.optimizer;
  oc.validate();
  const auto size = generator.size();
  if (target.ndim() != 2 || target.dim(0) != size.height || target.dim(1) != size.width) {
    throw std::invalid_argument("target image is " + shape_string(target.shape()) + " but the generator renders " +
                                std::to_string(size.height) + " x " + std::to_string(size.width));
  }
  std::vector<double> z = config.start ? *config.start : LatentCode::sample(generator.latent_dim(), config.seed).values;
  if (z.size() != generator.latent_dim()) throw std::invalid_argument("start latent has the wrong dimension");
  const Tensor x = target.detach();
  const OptimizerKind kind = oc.resolve(false);

  InversionResult out;
  out.mse = std::numeric_limits<double>::infinity();
  AdamState state;
  for (std::size_t it = 0; it < oc.max_iterations; ++it) {
    ComputationRecord record;
    RecordScope scope(record);
    Tensor latent({z.size()}, z, true);
    Tensor mse = mean(square(generator.decode(latent, oc.space) - x));
    const double value = mse.item();
    if (!std::isfinite(value)) throw DivergenceError("inversion diverged: non-finite loss at iteration " + std::to_string(it));
    out.mse_history.push_back(value);
    out.iterations = it + 1;
    if (value < out.mse) {
      out.mse = value;
      out.latent = {z, oc.space, config.seed};
    }
    if (value < config.stop_mse) break;
    backward(mse);
    auto g = clip_grad_norm(gradient_of(latent), oc.clip_norm);
    if (kind == OptimizerKind::adam) {
      adam_step(z, g, state, oc.learning_rate);
    } else {
      adamw_step(z, g, state, oc.learning_rate, oc.weight_decay);
    }
  }
  return out;
}

}  // namespace irisgrad
