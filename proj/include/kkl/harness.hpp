#pragma once

// Experiment runner: assembles plant, transform, frame and observer from a
// RunConfig, simulates, and reports traces and summary statistics.

#include "kkl/coord_change.hpp"
#include "kkl/kkl_transform.hpp"
#include "kkl/observer.hpp"
#include "kkl/plant.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace kkl {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::string preset = kOscillatorPreset;
  double tau = 0.1;
  double gamma = 1.0;
  std::vector<double> lambdas = {0.1, 0.2, 0.3, 0.4};
  int steps = 500;
  std::uint64_t seed = 42;
  bool noise = true;
  bool disturbance = false;
  double disturbance_bound = 0.01;
  RecoveryVariant variant = RecoveryVariant::MinMax;
  TransformMode mode = TransformMode::Polynomial;
  double series_tol = 1e-9;
  /// True initial state; the initial box is x0 ± x0_half_width.
  Vec x0 = (Vec(2) << 1.0, 0.0).finished();
  double x0_half_width = 0.5;
  int window_lo = 100;
  int window_hi = 500;
  double slack = 1e-9;
  int constant_samples = 20000;
  std::string coeffs_path;  ///< optional precomputed coefficient table
  std::string out_path;
  std::string svg_path;

  void validate() const {
    if (preset != kOscillatorPreset) throw ConfigError("unknown preset '" + preset + "'");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (lambdas.empty()) throw ConfigError("need at least one target eigenvalue");
    if (x0.size() != 2) throw ConfigError("x0 must have 2 components");
    if (!(x0_half_width >= 0.0)) throw ConfigError("x0 half width must be nonnegative");
    if (window_lo < 0 || window_hi < window_lo) throw ConfigError("invalid averaging window");
    if (!(disturbance_bound >= 0.0)) throw ConfigError("disturbance bound must be nonnegative");
  }
};

/// Everything built from a RunConfig before simulation starts.
struct Pipeline {
  std::shared_ptr<const PlantModel> plant;
  std::shared_ptr<const KklTransform> transform;
  std::shared_ptr<const CoordChangeSeq> coord;
  SystemConstants consts;
  TransformConstants transform_consts;
  double gamma_star = 0.0;
  ObserverConfig observer;
};

inline std::shared_ptr<const PlantModel> make_plant(const RunConfig& cfg) {
  OscillatorBoxes boxes;
  boxes.x0 = cfg.x0;
  boxes.x0_half_width = cfg.x0_half_width;
  return std::make_shared<const PlantModel>(oscillator_sie(cfg.tau, boxes));
}

/// Plant constants by sampling, transform constants measured on T over the
/// enlarged box (the region T* searches).
inline Pipeline build_pipeline(const RunConfig& cfg) {
  cfg.validate();
  Pipeline p;
  p.plant = make_plant(cfg);
  TargetSystem target = TargetSystem::diagonal(cfg.lambdas, cfg.gamma);

  if (cfg.mode == TransformMode::Series) {
    p.transform = std::make_shared<const KklTransform>(KklTransform::series(p.plant, target, cfg.series_tol));
  } else if (!cfg.coeffs_path.empty()) {
    std::ifstream in(cfg.coeffs_path);
    if (!in) throw ConfigError("cannot open coefficient table '" + cfg.coeffs_path + "'");
    CoefficientTable table = read_coefficients(in);
    p.transform = std::make_shared<const KklTransform>(
        KklTransform::from_coefficients(p.plant, target, std::move(table.basis), std::move(table.coeffs)));
  } else {
    p.transform = std::make_shared<const KklTransform>(
        KklTransform::polynomial(p.plant, target, quadratic_basis_2d()));
  }
  p.coord = std::make_shared<const CoordChangeSeq>(build_coord_change(target));

  const LipschitzEstimate lip = estimate_lipschitz(*p.plant, cfg.constant_samples, cfg.seed);
  SystemConstants& k = p.consts;
  k.c_f = lip.c_f;
  k.c_h = lip.c_h;
  k.m = target.orders();
  k.m_bar = target.m_bar();
  k.c_o = estimate_c_o(*p.plant, k.m, cfg.constant_samples, cfg.seed + 1);
  k.c_c = target.controllability_constant();
  k.c_N = 1.0;
  p.gamma_star = gamma_star(k, target);

  TransformConstantOptions opt;
  opt.seed = cfg.seed + 2;
  p.transform_consts = estimate_transform_constants(*p.transform, p.plant->box_x_enlarged(), opt);
  k.c_L = p.transform_consts.c_L;
  k.c_I = p.transform_consts.c_I;
  k.c = p.transform_consts.c;
  k.source = SystemConstants::Source::TransformEstimate;

  ObserverConfig& o = p.observer;
  o.transform = p.transform;
  o.coord = p.coord;
  o.consts = k;
  o.gamma = cfg.gamma;
  o.margin_c_over_gamma = k.c / std::pow(cfg.gamma, k.m_bar - 1);
  o.recovery_variant = cfg.variant;
  o.validate();
  return p;
}

struct TraceRow {
  long k = 0;
  Vec x;
  Vec x_lo;
  Vec x_hi;
  Vec z;
  Vec z_lo;
  Vec z_hi;
  Vec zhat_width;
  Vec y;
  Vec w;
  double resid_hi = 0.0;
  double resid_lo = 0.0;
  double width_x = 0.0;
  double width_z = 0.0;
};

struct RunSummary {
  double gamma = 0.0;
  int violations = 0;
  std::optional<long> first_violation;
  double mean_width_x = 0.0;
  double final_width_x = 0.0;
  /// exp(slope) of a least-squares fit of log ||ẑ+ - ẑ-||∞ against k.
  double decay_rate = 0.0;
  double max_residual = 0.0;
  std::optional<int> plant_left_box;
};

struct RunResult {
  std::vector<TraceRow> rows;
  RunSummary summary;
  SystemConstants consts;
  double gamma_star = 0.0;
};

class EnclosureViolation : public Error {
 public:
  EnclosureViolation(long step, double gamma)
      : Error("enclosure violated at step " + std::to_string(step) + " (gamma " +
              format_double(gamma) + ")"),
        step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

namespace detail {

inline double geometric_rate(const std::vector<TraceRow>& rows) {
  double sk = 0, sy = 0, skk = 0, sky = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.k < 1) continue;
    const double w = r.zhat_width.maxCoeff();
    if (!(w >= std::numeric_limits<double>::min()) || !std::isfinite(w)) continue;
    const double y = std::log(w);
    sk += r.k;
    sy += y;
    skk += static_cast<double>(r.k) * r.k;
    sky += r.k * y;
    ++n;
  }
  if (n < 2) return 0.0;
  const double slope = (n * sky - sk * sy) / (n * skk - sk * sk);
  return std::exp(slope);
}

}  // namespace detail

/// Builds the pipeline, simulates `steps` steps and runs the observer along.
/// Violations are counted, not thrown; see require_enclosure.
inline RunResult run_experiment(const RunConfig& cfg) {
  const Pipeline p = build_pipeline(cfg);
  const int n_x = p.plant->n_x();
  const int n_y = p.plant->n_y();

  NoiseRealization realized = NoiseRealization::none(n_x, n_y);
  NoiseSpec bounds = NoiseSpec::none(n_x, n_y);
  if (cfg.noise) {
    realized.w = [](int k) { return Vec::Constant(1, oscillator_noise(k)); };
    const NoiseSpec noise = oscillator_noise_bounds(n_x);
    bounds.w_lo = noise.w_lo;
    bounds.w_hi = noise.w_hi;
  }
  if (cfg.disturbance) {
    auto table = std::make_shared<std::vector<Vec>>();
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int k = 0; k < cfg.steps; ++k) {
      Vec d(n_x);
      for (int i = 0; i < n_x; ++i) d(i) = cfg.disturbance_bound * unit(rng);
      table->push_back(d);
    }
    realized.d = [table](int k) { return table->at(static_cast<std::size_t>(k)); };
    const double b = cfg.disturbance_bound;
    bounds.d_lo = [n_x, b](int) { return Vec::Constant(n_x, -b); };
    bounds.d_hi = [n_x, b](int) { return Vec::Constant(n_x, b); };
  }

  const PlantTrace trace = simulate_plant(*p.plant, cfg.x0, realized, cfg.steps);
  IntervalObserver obs(p.observer, p.plant->box_x0().lo, p.plant->box_x0().hi);

  RunResult result;
  result.consts = p.consts;
  result.gamma_star = p.gamma_star;
  RunSummary& s = result.summary;
  s.gamma = cfg.gamma;
  s.plant_left_box = trace.left_enlarged_box;
  double width_sum = 0.0;
  int width_count = 0;

  for (int k = 0; k <= cfg.steps; ++k) {
    if (k > 0) {
      obs.update(trace.y[k - 1], bounds.w_lo(k - 1), bounds.w_hi(k - 1), bounds.d_lo(k - 1),
                 bounds.d_hi(k - 1));
    }
    const ObserverState& st = obs.state();
    TraceRow row;
    row.k = k;
    row.x = trace.x[k];
    row.x_lo = st.x_lo;
    row.x_hi = st.x_hi;
    row.z = p.transform->eval(trace.x[k]);
    row.z_lo = st.z_lo;
    row.z_hi = st.z_hi;
    row.zhat_width = st.zhat_width;
    row.y = trace.y[k];
    row.w = trace.w[k];
    row.resid_hi = obs.bounds().from_hi.residual;
    row.resid_lo = obs.bounds().from_lo.residual;
    row.width_x = (row.x_hi - row.x_lo).maxCoeff();
    row.width_z = (row.z_hi - row.z_lo).maxCoeff();

    const double sl = cfg.slack;
    const bool ok = (row.x.array() >= row.x_lo.array() - sl).all() &&
                    (row.x.array() <= row.x_hi.array() + sl).all() &&
                    (row.z.array() >= row.z_lo.array() - sl).all() &&
                    (row.z.array() <= row.z_hi.array() + sl).all();
    if (!ok) {
      ++s.violations;
      if (!s.first_violation) s.first_violation = k;
    }
    if (k >= cfg.window_lo && k <= cfg.window_hi) {
      width_sum += row.width_x;
      ++width_count;
    }
    s.max_residual = std::max({s.max_residual, row.resid_hi, row.resid_lo});
    result.rows.push_back(std::move(row));
  }
  s.mean_width_x = width_count > 0 ? width_sum / width_count : std::numeric_limits<double>::quiet_NaN();
  s.final_width_x = result.rows.back().width_x;
  s.decay_rate = detail::geometric_rate(result.rows);
  return result;
}

inline void require_enclosure(const RunResult& r) {
  if (r.summary.violations > 0) throw EnclosureViolation(*r.summary.first_violation, r.summary.gamma);
}

/// One run per gamma on identical noise, sorted by gamma. Throws
/// EnclosureViolation if any run fails.
inline std::vector<RunSummary> compare_gammas(const RunConfig& cfg, std::vector<double> gammas) {
  if (gammas.empty()) throw ConfigError("compare: no gamma values");
  std::sort(gammas.begin(), gammas.end());
  gammas.erase(std::unique(gammas.begin(), gammas.end()), gammas.end());
  std::vector<RunSummary> table;
  for (double g : gammas) {
    RunConfig c = cfg;
    c.gamma = g;
    const RunResult r = run_experiment(c);
    require_enclosure(r);
    table.push_back(r.summary);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline void append(std::ostream& out, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << format_double(v(i));
}

inline void header(std::ostream& out, const char* name, Eigen::Index n) {
  for (Eigen::Index i = 1; i <= n; ++i) out << ',' << name << i;
}

}  // namespace detail

/// k,x1..,x_lo1..,x_hi1..,z1..,z_lo1..,z_hi1..,y1..,w1..,resid_hi,resid_lo,width_x,width_z
inline void write_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  if (rows.empty()) throw Error("write_csv: empty trace");
  const auto nx = rows.front().x.size();
  const auto nz = rows.front().z.size();
  const auto ny = rows.front().y.size();
  out << 'k';
  detail::header(out, "x", nx);
  detail::header(out, "x_lo", nx);
  detail::header(out, "x_hi", nx);
  detail::header(out, "z", nz);
  detail::header(out, "z_lo", nz);
  detail::header(out, "z_hi", nz);
  detail::header(out, "y", ny);
  detail::header(out, "w", ny);
  out << ",resid_hi,resid_lo,width_x,width_z\n";
  for (const auto& r : rows) {
    out << r.k;
    for (const Vec* v : {&r.x, &r.x_lo, &r.x_hi, &r.z, &r.z_lo, &r.z_hi, &r.y, &r.w}) {
      detail::append(out, *v);
    }
    out << ',' << format_double(r.resid_hi) << ',' << format_double(r.resid_lo) << ','
        << format_double(r.width_x) << ',' << format_double(r.width_z) << '\n';
  }
}

/// One panel per state component: true state and its bounds against k.
/// The vertical range is the plant's enlarged box; bounds are clipped to it.
inline void write_svg(std::ostream& out, const std::vector<TraceRow>& rows, const Box& view) {
  if (rows.empty()) throw Error("write_svg: empty trace");
  const int width = 800;
  const int panel = 260;
  const int pad = 40;
  const auto nx = rows.front().x.size();
  const double k_max = std::max<double>(1.0, static_cast<double>(rows.back().k));
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << nx * panel << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (Eigen::Index i = 0; i < nx; ++i) {
    const double top = static_cast<double>(i) * panel;
    const double lo = view.lo(i);
    const double hi = view.hi(i);
    auto px = [&](double k) { return pad + (width - 2 * pad) * k / k_max; };
    auto py = [&](double v) {
      v = std::clamp(v, lo, hi);
      return top + pad / 2.0 + (panel - pad) * (hi - v) / (hi - lo);
    };
    out << "<rect x=\"" << pad << "\" y=\"" << top + pad / 2.0 << "\" width=\"" << width - 2 * pad
        << "\" height=\"" << panel - pad << "\" fill=\"none\" stroke=\"#999\"/>\n";
    out << "<text x=\"" << pad << "\" y=\"" << top + pad / 2.0 - 4 << "\">x" << i + 1
        << " (true: black, upper: red, lower: blue)</text>\n";
    auto line = [&](const char* color, auto&& value) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
      for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(static_cast<double>(r.k)), py(value(r)));
        out << buf;
      }
      out << "\"/>\n";
    };
    line("black", [i](const TraceRow& r) { return r.x(i); });
    line("red", [i](const TraceRow& r) { return r.x_hi(i); });
    line("blue", [i](const TraceRow& r) { return r.x_lo(i); });
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Config documents

inline TransformMode parse_transform_mode(const std::string& s) {
  if (s == "poly" || s == "polynomial") return TransformMode::Polynomial;
  if (s == "series") return TransformMode::Series;
  throw ConfigError("unknown transform mode '" + s + "'");
}

inline bool parse_toggle(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw ConfigError("expected on/off, got '" + s + "'");
}

/// Applies a flat JSON object onto `cfg`. Unknown keys are rejected.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "preset") cfg.preset = value.get<std::string>();
      else if (key == "tau") cfg.tau = value.get<double>();
      else if (key == "gamma") cfg.gamma = value.get<double>();
      else if (key == "lambdas") cfg.lambdas = value.get<std::vector<double>>();
      else if (key == "steps") cfg.steps = value.get<int>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "noise") cfg.noise = value.is_boolean() ? value.get<bool>() : parse_toggle(value.get<std::string>());
      else if (key == "disturbance") cfg.disturbance = value.is_boolean() ? value.get<bool>() : parse_toggle(value.get<std::string>());
      else if (key == "disturbance_bound") cfg.disturbance_bound = value.get<double>();
      else if (key == "variant") cfg.variant = parse_recovery_variant(value.get<std::string>());
      else if (key == "mode") cfg.mode = parse_transform_mode(value.get<std::string>());
      else if (key == "series_tol") cfg.series_tol = value.get<double>();
      else if (key == "x0") {
        const auto v = value.get<std::vector<double>>();
        cfg.x0 = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      else if (key == "x0_half_width") cfg.x0_half_width = value.get<double>();
      else if (key == "window_lo") cfg.window_lo = value.get<int>();
      else if (key == "window_hi") cfg.window_hi = value.get<int>();
      else if (key == "slack") cfg.slack = value.get<double>();
      else if (key == "constant_samples") cfg.constant_samples = value.get<int>();
      else if (key == "coeffs") cfg.coeffs_path = value.get<std::string>();
      else if (key == "out") cfg.out_path = value.get<std::string>();
      else if (key == "svg") cfg.svg_path = value.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

inline nlohmann::json constants_json(const SystemConstants& k, double gamma_star_value,
                                     const TransformConstants& tc) {
  return {{"c_f", k.c_f},   {"c_h", k.c_h},         {"c_o", k.c_o},
          {"c_c", k.c_c},   {"c_N", k.c_N},         {"m", k.m},
          {"m_bar", k.m_bar}, {"c_L", k.c_L},       {"c_I", k.c_I},
          {"c", k.c},       {"kappa", tc.kappa},    {"gamma_star", gamma_star_value}};
}

}  // namespace kkl
