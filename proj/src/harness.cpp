#include "irisgrad/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "irisgrad/geometry.hpp"
#include "irisgrad/identity.hpp"
#include "json.hpp"

namespace irisgrad {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config reading
// ---------------------------------------------------------------------------

std::string line_context(const std::string& text, std::size_t byte) {
  std::size_t line = 1, line_start = 0;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
    if (text[i] == '\n') {
      ++line;
      line_start = i + 1;
    }
  const std::size_t line_end = std::min(text.find('\n', line_start), text.size());
  const std::size_t col = byte > line_start ? byte - line_start : 1;
  std::ostringstream os;
  os << "line " << line << ", column " << col << ":\n  " << text.substr(line_start, line_end - line_start) << "\n  "
     << std::string(col > 0 ? col - 1 : 0, ' ') << '^';
  return os.str();
}

// Object view that remembers which keys were read, so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + std::string(j_.at(key).type_name()) + ")");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), path_ + "." + key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + path_ + "." + item.key());
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(path_ + ": " + msg); }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

TargetSpec read_target(const json& j, const std::string& path) {
  Section s(j, path);
  TargetSpec t{wrap(path + ".kind", [&] { return parse_attribute_kind(s.get<std::string>("kind", "")); }),
               std::nullopt, std::nullopt, 1.0};
  if (s.has("target")) t.target = s.get<double>("target", 0.0);
  if (s.has("relative")) t.relative = s.get<double>("relative", 0.0);
  t.weight = s.get<double>("weight", 1.0);
  s.finish();
  if (is_hold(t.kind) && (t.target || t.relative)) throw ConfigError(path + ": hold kinds take no target");
  if (!is_hold(t.kind) && t.target.has_value() == t.relative.has_value()) {
    throw ConfigError(path + ": give exactly one of 'target' or 'relative'");
  }
  if (!(t.weight >= 0.0)) throw ConfigError(path + ".weight: must be >= 0");
  return t;
}

void read_traversal(Section s, TraversalConfig& t) {
  t.learning_rate = s.get<double>("learning_rate", t.learning_rate);
  if (s.has("optimizer")) {
    t.optimizer = wrap(s.where("optimizer"), [&] { return parse_optimizer(s.get<std::string>("optimizer", "")); });
  }
  t.weight_decay = s.get<double>("weight_decay", t.weight_decay);
  t.clip_norm = s.get<double>("clip_norm", t.clip_norm);
  t.max_iterations = s.get<std::size_t>("max_iterations", t.max_iterations);
  t.snapshot_stride = s.get<std::size_t>("snapshot_stride", t.snapshot_stride);
  Section tol = s.child("tolerances");
  t.tolerances.radius = tol.get<double>("radius", t.tolerances.radius);
  t.tolerances.ratio = tol.get<double>("ratio", t.tolerances.ratio);
  t.tolerances.sharpness = tol.get<double>("sharpness", t.tolerances.sharpness);
  tol.finish();
  s.finish();
  wrap("traversal", [&] {
    t.validate();
    return 0;
  });
}

void read_loss(Section s, LossOptions& o) {
  o.sharpness.power_scale = s.get<double>("power_scale", o.sharpness.power_scale);
  o.sharpness.gain = s.get<double>("sharpness_gain", o.sharpness.gain);
  o.eyelid_beta = s.get<double>("eyelid_beta", o.eyelid_beta);
  o.latent_weight = s.get<double>("latent_weight", o.latent_weight);
  o.circles.band.temperature = s.get<double>("mask_temperature", o.circles.band.temperature);
  s.finish();
  if (!(o.sharpness.power_scale > 0.0)) throw ConfigError("loss.power_scale: must be > 0");
  if (!(o.sharpness.gain > 0.0)) throw ConfigError("loss.sharpness_gain: must be > 0");
  if (!(o.eyelid_beta > 0.0)) throw ConfigError("loss.eyelid_beta: must be > 0");
  if (!(o.latent_weight >= 0.0)) throw ConfigError("loss.latent_weight: must be >= 0");
  if (!(o.circles.band.temperature > 0.0)) throw ConfigError("loss.mask_temperature: must be > 0");
}

void read_matrix(Section s, MatrixPlan& m) {
  m.seeds = s.get<std::vector<std::uint64_t>>("seeds", m.seeds);
  if (s.has("attributes")) {
    m.attributes.clear();
    for (const auto& name : s.get<std::vector<std::string>>("attributes", {}))
      m.attributes.push_back(wrap(s.where("attributes"), [&] { return parse_attribute_kind(name); }));
  }
  m.directions = s.get<std::vector<std::string>>("directions", m.directions);
  m.targets = s.get<std::vector<double>>("targets", m.targets);
  m.identity_arms = s.get<std::vector<bool>>("identity_arms", m.identity_arms);
  if (s.has("spaces")) {
    m.spaces.clear();
    for (const auto& name : s.get<std::vector<std::string>>("spaces", {}))
      m.spaces.push_back(wrap(s.where("spaces"), [&] { return parse_latent_space(name); }));
  }
  m.identity_weight = s.get<double>("identity_weight", m.identity_weight);
  m.cell_artifacts = s.get<bool>("cell_artifacts", m.cell_artifacts);
  s.finish();
  if (m.seeds.empty() || m.attributes.empty() || m.directions.empty() || m.targets.empty() ||
      m.identity_arms.empty() || m.spaces.empty()) {
    throw ConfigError("matrix: seeds, attributes, directions, targets, identity_arms and spaces must be non-empty");
  }
  for (const auto& d : m.directions)
    if (d != "decrease" && d != "increase") throw ConfigError("matrix.directions: unknown direction '" + d + "'");
  for (double t : m.targets)
    if (!(t > 0.0)) throw ConfigError("matrix.targets: relative steps must be > 0");
  if (!(m.identity_weight >= 0.0)) throw ConfigError("matrix.identity_weight: must be >= 0");
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
}

json measured_json(const Measurements& m) {
  return {{"sharpness", m.sharpness},
          {"pupil_radius", m.pupil_radius},
          {"iris_radius", m.iris_radius},
          {"pupil_iris_ratio", m.pupil_iris_ratio},
          {"eyelid_opening", m.eyelid_opening}};
}

void write_both(const Tensor& img, const fs::path& stem) {
  auto im = IrisImage::from_tensor(img);
  write_image(im, stem.string() + ".pgm");
  write_image(im, stem.string() + ".png");
}

const GaborBank& evaluation_bank() {
  static const GaborBank bank = GaborBank::evaluation_bank();
  return bank;
}

ScoreRow run_cell(const RunConfig& config, const Generator& generator, const Cell& cell, const fs::path& out) {
  ScoreRow row;
  row.cell = cell;
  RunConfig cfg = config;
  cfg.traversal.space = cell.space;
  try {
    const LatentCode z0 = start_latent(cfg, generator, cell.seed);
    std::vector<AttributeSpec> specs;
    if (is_hold(cell.attribute)) {
      specs.push_back({cell.attribute, std::nullopt, 1.0});
    } else {
      Tensor x0;
      {
        NoGradScope no_grad;
        x0 = generator.decode(z0.tensor(), cell.space);
      }
      row.start_value = measure(x0, cfg.loss).get(cell.attribute);
      const double sign = cell.direction == "decrease" ? -1.0 : 1.0;
      row.target = *row.start_value * (1.0 + sign * cell.relative);
      specs.push_back({cell.attribute, row.target, 1.0});
    }
    if (cell.identity && cell.attribute != AttributeKind::identity_hold) {
      specs.push_back({AttributeKind::identity_hold, std::nullopt, cfg.matrix.identity_weight});
    }
    auto result = traverse(z0, specs, generator, cfg.traversal, cfg.loss);
    const auto& traj = result.trajectory;
    row.iterations = traj.rows.size();
    row.status = traj.status;
    row.message = traj.message;
    if (!is_hold(cell.attribute)) row.final_value = result.best_measured.get(cell.attribute);
    row.hd = comparison_score(result.initial_image, result.best_image, cfg.loss);
    {
      NoGradScope no_grad;
      const auto c = estimate_circles(result.best_image, soft_mask(result.best_image, cfg.loss.circles.band),
                                      cfg.loss.circles);
      row.texture_energy = texture_energy(result.best_image, c, evaluation_bank());
    }
    if (cfg.matrix.cell_artifacts) {
      char name[64];
      std::snprintf(name, sizeof name, "cell_%04zu", cell.index);
      write_image(IrisImage::from_tensor(result.best_image), out / (std::string(name) + "_final.pgm"));
      std::ofstream os(out / (std::string(name) + "_trajectory.jsonl"), std::ios::binary);
      traj.write_jsonl(os);
      if (!os) throw std::runtime_error("cannot write trajectory for " + std::string(name));
    }
  } catch (const DegenerateSegmentation& e) {
    row.status = TraversalStatus::diverged;
    row.message = e.what();
  } catch (const DivergenceError& e) {
    row.status = TraversalStatus::diverged;
    row.message = e.what();
  }
  return row;
}

std::vector<ScoreRow> run_cells(const RunConfig& config, const std::vector<Cell>& cells, const fs::path& cell_dir) {
  const Generator generator = make_generator(config);
  std::vector<ScoreRow> rows(cells.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, cells.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    // Cells already run in parallel; keep each one single-threaded.
    if (workers > 1) omp_set_num_threads(1);
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        rows[i] = run_cell(config, generator, cells[i], cell_dir);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = cells.size();
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return rows;
}

ArmSummary summarize(const std::string& label, const std::vector<const ScoreRow*>& rows) {
  ArmSummary s;
  s.label = label;
  s.cells = rows.size();
  if (rows.empty()) return s;
  std::vector<double> hd;
  std::size_t converged = 0;
  for (const auto* r : rows) {
    hd.push_back(r->hd);
    converged += r->status == TraversalStatus::converged;
  }
  double total = 0.0;
  for (double v : hd) total += v;
  s.mean_hd = total / static_cast<double>(hd.size());
  s.median_hd = median(hd);
  s.convergence_rate = static_cast<double>(converged) / static_cast<double>(rows.size());
  return s;
}

json arm_json(const ArmSummary& a) {
  return {{"label", a.label},
          {"cells", a.cells},
          {"mean_hd", a.mean_hd},
          {"median_hd", a.median_hd},
          {"convergence_rate", a.convergence_rate}};
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig parse_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::string what = e.what();
    const auto colon = what.rfind(": ");
    throw ConfigError(source + ": syntax error at " + line_context(text, e.byte) + "\n  " +
                      (colon == std::string::npos ? what : what.substr(colon + 2)));
  }
  RunConfig c;
  try {
    Section root(j, source);
    {
      Section d = root.child("decoder");
      c.decoder.kind = d.get<std::string>("kind", c.decoder.kind);
      if (c.decoder.kind != "procedural" && c.decoder.kind != "conv") {
        throw ConfigError(source + ".decoder.kind: unknown decoder '" + c.decoder.kind + "' (procedural or conv)");
      }
      c.decoder.seed = d.get<std::uint64_t>("seed", c.decoder.seed);
      c.decoder.latent_dim = d.get<std::size_t>("latent_dim", c.decoder.latent_dim);
      c.decoder.mapping = d.get<bool>("mapping", c.decoder.mapping);
      if (d.has("weights")) c.decoder.weights = d.get<std::string>("weights", "");
      d.finish();
      if (c.decoder.latent_dim < procedural_latent::first_texture && c.decoder.kind == "procedural") {
        throw ConfigError(source + ".decoder.latent_dim: procedural decoder needs at least 8 dimensions");
      }
    }
    if (root.has("resolution")) {
      c.size = wrap(source + ".resolution", [&] { return parse_resolution(root.get<std::string>("resolution", "")); });
    }
    c.seed = root.get<std::uint64_t>("seed", c.seed);
    if (root.has("space")) {
      c.traversal.space = wrap(source + ".space", [&] { return parse_latent_space(root.get<std::string>("space", "")); });
    }
    if (root.has("attributes")) {
      const json& list = root.raw("attributes");
      if (!list.is_array()) throw ConfigError(source + ".attributes: must be an array");
      for (std::size_t i = 0; i < list.size(); ++i)
        c.attributes.push_back(read_target(list[i], source + ".attributes[" + std::to_string(i) + "]"));
      std::set<AttributeKind> kinds;
      for (const auto& t : c.attributes)
        if (!kinds.insert(t.kind).second) {
          throw ConfigError(source + ".attributes: duplicate kind '" + to_string(t.kind) + "'");
        }
    }
    read_traversal(root.child("traversal"), c.traversal);
    read_loss(root.child("loss"), c.loss);
    read_matrix(root.child("matrix"), c.matrix);
    {
      Section inv = root.child("inversion");
      if (inv.has("image")) c.inversion.image = inv.get<std::string>("image", "");
      auto& ic = c.inversion.config;
      ic.optimizer.learning_rate = inv.get<double>("learning_rate", ic.optimizer.learning_rate);
      ic.optimizer.max_iterations = inv.get<std::size_t>("max_iterations", ic.optimizer.max_iterations);
      ic.stop_mse = inv.get<double>("stop_mse", ic.stop_mse);
      ic.seed = inv.get<std::uint64_t>("seed", ic.seed);
      inv.finish();
      wrap(source + ".inversion", [&] {
        ic.optimizer.validate();
        return 0;
      });
    }
    if (root.has("start_latent")) c.start_latent = root.get<std::string>("start_latent", "");
    c.workers = root.get<std::size_t>("workers", c.workers);
    root.finish();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  if (c.workers < 1) throw ConfigError(source + ".workers: must be >= 1");
  if (c.traversal.space == LatentSpace::W && !c.decoder.mapping) {
    throw ConfigError(source + ".space: W needs decoder.mapping = true");
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.filename().string());
}

Generator make_generator(const RunConfig& config) {
  const auto& d = config.decoder;
  std::shared_ptr<const Synthesis> synthesis;
  if (d.kind == "procedural") {
    ProceduralConfig pc;
    pc.size = config.size;
    pc.latent_dim = d.latent_dim;
    synthesis = std::make_shared<ProceduralDecoder>(pc);
  } else {
    ConvDecoderConfig cc;
    cc.size = config.size;
    cc.latent_dim = d.latent_dim;
    cc.seed = d.seed;
    synthesis = d.weights ? std::make_shared<ConvDecoder>(cc, load_weights(*d.weights))
                          : std::make_shared<ConvDecoder>(cc);
  }
  std::optional<MappingNetwork> mapping;
  if (d.mapping) mapping.emplace(d.latent_dim, d.seed);
  return Generator(std::move(synthesis), std::move(mapping));
}

LatentCode start_latent(const RunConfig& config, const Generator& generator, std::uint64_t seed) {
  LatentCode code = config.start_latent ? read_latent(*config.start_latent)
                                        : LatentCode::sample(generator.latent_dim(), seed);
  if (code.dim() != generator.latent_dim()) throw std::invalid_argument("start latent has the wrong dimension");
  if (code.space == config.traversal.space) return code;
  if (code.space == LatentSpace::Z) return generator.map(code);
  throw std::invalid_argument("a W-space start latent cannot seed a Z-space traversal");
}

void write_latent(const LatentCode& code, const fs::path& path) {
  json j{{"space", to_string(code.space)}, {"seed", code.seed}, {"values", code.values}};
  write_text(path, j.dump(2) + "\n");
}

LatentCode read_latent(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open latent file '" + path.string() + "'");
  try {
    const json j = json::parse(is);
    LatentCode code;
    code.space = parse_latent_space(j.at("space").get<std::string>());
    code.seed = j.value("seed", std::uint64_t{0});
    code.values = j.at("values").get<std::vector<double>>();
    return code;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed latent file '" + path.string() + "': " + e.what());
  }
}

double comparison_score(const Tensor& a, const Tensor& b, const LossOptions& options) {
  NoGradScope no_grad;
  const auto& band = options.circles.band;
  const auto ca = estimate_circles(a, soft_mask(a, band), options.circles);
  const auto cb = estimate_circles(b, soft_mask(b, band), options.circles);
  return hamming(iris_code(a, ca, evaluation_bank()), iris_code(b, cb, evaluation_bank()));
}

std::vector<Cell> plan_cells(const MatrixPlan& plan) {
  std::vector<Cell> cells;
  for (auto space : plan.spaces)
    for (auto seed : plan.seeds)
      for (auto attribute : plan.attributes) {
        if (is_hold(attribute)) {
          // Nothing to steer: one cell per arm.
          for (bool arm : plan.identity_arms) cells.push_back({cells.size(), seed, attribute, "hold", 0.0, arm, space});
          continue;
        }
        for (const auto& direction : plan.directions)
          for (double rel : plan.targets)
            for (bool arm : plan.identity_arms) cells.push_back({cells.size(), seed, attribute, direction, rel, arm, space});
      }
  return cells;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

RankSumResult rank_sum_less(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("rank-sum test needs two non-empty samples");
  std::vector<std::pair<double, int>> all;
  for (double v : a) all.emplace_back(v, 0);
  for (double v : b) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
  double rank_a = 0.0, ties = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second == 0) rank_a += avg;
    i = j;
  }
  RankSumResult r;
  r.u = rank_a - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  if (var <= 0.0) {
    r.z = 0.0;
    r.p_less = 1.0;
    return r;
  }
  r.z = (r.u - mu + 0.5) / std::sqrt(var);  // continuity correction toward H0
  r.p_less = 0.5 * std::erfc(-r.z / std::sqrt(2.0));
  return r;
}

std::string scores_csv(const std::vector<ScoreRow>& rows, bool with_texture_energy) {
  std::string out =
      "seed,attribute,direction,target,start_value,identity_loss,space,final_value,iterations,status,hd";
  if (with_texture_energy) out += ",texture_energy";
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.cell.seed) + ',' + to_string(r.cell.attribute) + ',' + r.cell.direction + ',' +
           opt_num(r.target) + ',' + opt_num(r.start_value) + ',' + (r.cell.identity ? "on" : "off") + ',' +
           to_string(r.cell.space) + ',' + opt_num(r.final_value) + ',' + std::to_string(r.iterations) + ',' +
           to_string(r.status) + ',' + num(r.hd);
    if (with_texture_energy) out += ',' + num(r.texture_energy);
    out += '\n';
  }
  return out;
}

MatrixResult run_matrix(const RunConfig& config, const fs::path& out) {
  ensure_dir(out);
  const fs::path cell_dir = out / "cells";
  if (config.matrix.cell_artifacts) ensure_dir(cell_dir);
  MatrixResult result;
  result.rows = run_cells(config, plan_cells(config.matrix), cell_dir);

  std::vector<const ScoreRow*> with, without;
  std::vector<double> hd_with, hd_without;
  std::size_t diverged = 0;
  for (const auto& r : result.rows) {
    (r.cell.identity ? with : without).push_back(&r);
    (r.cell.identity ? hd_with : hd_without).push_back(r.hd);
    if (r.status == TraversalStatus::diverged) ++diverged;
  }
  result.any_diverged = diverged > 0;
  if (!without.empty()) result.arms.push_back(summarize("no_identity", without));
  if (!with.empty()) result.arms.push_back(summarize("identity", with));
  if (!hd_with.empty() && !hd_without.empty()) result.identity_test = rank_sum_less(hd_with, hd_without);

  write_text(out / "scores.csv", scores_csv(result.rows, false));
  json summary;
  summary["cells"] = result.rows.size();
  summary["diverged"] = diverged;
  summary["arms"] = json::array();
  for (const auto& a : result.arms) summary["arms"].push_back(arm_json(a));
  if (result.identity_test) {
    summary["identity_rank_sum"] = {{"u", result.identity_test->u},
                                    {"z", result.identity_test->z},
                                    {"p_identity_lower", result.identity_test->p_less}};
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return result;
}

MatrixResult run_space_compare(const RunConfig& config, const fs::path& out) {
  if (!config.decoder.mapping) throw ConfigError("space-compare needs decoder.mapping = true");
  RunConfig cfg = config;
  cfg.matrix.spaces = {LatentSpace::Z, LatentSpace::W};
  ensure_dir(out);
  const fs::path cell_dir = out / "cells";
  if (cfg.matrix.cell_artifacts) ensure_dir(cell_dir);
  MatrixResult result;
  result.rows = run_cells(cfg, plan_cells(cfg.matrix), cell_dir);

  json summary;
  summary["cells_per_space"] = result.rows.size() / 2;
  summary["spaces"] = json::array();
  for (auto space : cfg.matrix.spaces) {
    std::vector<const ScoreRow*> rows;
    double energy = 0.0;
    for (const auto& r : result.rows)
      if (r.cell.space == space) {
        rows.push_back(&r);
        energy += r.texture_energy;
        if (r.status == TraversalStatus::diverged) result.any_diverged = true;
      }
    auto arm = summarize(to_string(space), rows);
    result.arms.push_back(arm);
    json j = arm_json(arm);
    j["mean_texture_energy"] = rows.empty() ? 0.0 : energy / static_cast<double>(rows.size());
    summary["spaces"].push_back(j);
  }
  write_text(out / "paired_scores.csv", scores_csv(result.rows, true));
  write_text(out / "space_summary.json", summary.dump(2) + "\n");
  return result;
}

SingleRunResult run_single(const RunConfig& config, const fs::path& out) {
  if (config.attributes.empty()) throw ConfigError("attributes: a single traversal needs at least one entry");
  ensure_dir(out);
  const Generator generator = make_generator(config);
  const LatentCode z0 = start_latent(config, generator, config.seed);
  Tensor x0;
  {
    NoGradScope no_grad;
    x0 = generator.decode(z0.tensor(), config.traversal.space);
  }
  const Measurements start = measure(x0, config.loss);
  SingleRunResult r;
  for (const auto& t : config.attributes) {
    std::optional<double> target = t.target;
    if (t.relative) target = start.get(t.kind) * (1.0 + *t.relative);
    r.specs.push_back({t.kind, target, t.weight});
  }
  r.traversal = traverse(z0, r.specs, generator, config.traversal, config.loss);
  const auto& tr = r.traversal;
  r.hd = comparison_score(tr.initial_image, tr.best_image, config.loss);

  write_both(tr.initial_image, out / "initial");
  write_both(tr.best_image, out / "final");
  {
    std::ofstream os(out / "trajectory.jsonl", std::ios::binary);
    tr.trajectory.write_jsonl(os);
    if (!os) throw std::runtime_error("cannot write trajectory.jsonl");
  }
  write_latent(tr.best, out / "latent.json");
  json summary;
  summary["status"] = to_string(tr.trajectory.status);
  summary["iterations"] = tr.trajectory.rows.size();
  summary["best_iteration"] = tr.trajectory.best_iteration;
  summary["optimizer"] = to_string(tr.trajectory.optimizer);
  summary["space"] = to_string(config.traversal.space);
  summary["initial"] = measured_json(tr.initial_measured);
  summary["final"] = measured_json(tr.best_measured);
  json targets = json::object();
  for (const auto& s : r.specs)
    if (s.target) targets[to_string(s.kind)] = *s.target;
  summary["targets"] = targets;
  summary["hd"] = r.hd;
  if (!tr.trajectory.message.empty()) summary["message"] = tr.trajectory.message;
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return r;
}

GenerateResult run_generate(const RunConfig& config, const fs::path& out) {
  ensure_dir(out);
  const Generator generator = make_generator(config);
  GenerateResult r;
  r.latent = start_latent(config, generator, config.seed);
  NoGradScope no_grad;
  const Tensor x = generator.decode(r.latent.tensor(), r.latent.space);
  r.image = IrisImage::from_tensor(x);
  write_both(x, out / "image");
  const Tensor m = soft_mask(x, config.loss.circles.band);
  write_mask_pgm(m, out / "mask.pgm");
  write_latent(r.latent, out / "latent.json");
  try {
    write_iris_code(iris_code(x, estimate_circles(x, m, config.loss.circles), evaluation_bank()), out / "code.irc");
  } catch (const DegenerateSegmentation&) {
    // Non-iris renders (e.g. the random conv decoder) simply get no code.
  }
  return r;
}

InversionResult run_invert(const RunConfig& config, const fs::path& out) {
  if (!config.inversion.image) throw ConfigError("inversion.image: path of the image to invert is required");
  ensure_dir(out);
  const Generator generator = make_generator(config);
  const IrisImage target = read_image(*config.inversion.image);
  InversionConfig ic = config.inversion.config;
  ic.optimizer.space = config.traversal.space;
  ic.optimizer.clip_norm = config.traversal.clip_norm;
  ic.optimizer.optimizer = config.traversal.optimizer;
  ic.optimizer.weight_decay = config.traversal.weight_decay;
  InversionResult r = invert(target.tensor(), generator, ic);
  write_latent(r.latent, out / "latent.json");
  {
    NoGradScope no_grad;
    write_both(generator.decode(r.latent.tensor(), r.latent.space), out / "reconstruction");
  }
  std::string lines;
  for (std::size_t i = 0; i < r.mse_history.size(); ++i)
    lines += json{{"iteration", i}, {"mse", r.mse_history[i]}}.dump() + '\n';
  lines += json{{"summary", {{"iterations", r.iterations}, {"best_mse", r.mse}}}}.dump() + '\n';
  write_text(out / "inversion.jsonl", lines);
  return r;
}

}  // namespace irisgrad
