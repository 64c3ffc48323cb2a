// Command-line front end for the interval observer experiments.
//
//   kkl_observer run --preset oscillator-siE --gamma 1.0 --steps 500 --noise on --out trace.csv
//   kkl_observer compare --gammas 1.0,0.7 --steps 500
//   kkl_observer constants --preset oscillator-siE
//   kkl_observer coeffs --gamma 1.0 --out coeffs.txt

#include "kkl/kkl.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitViolation = 2;
constexpr int kExitConfig = 3;

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw kkl::ConfigError("not a number: '" + item + "'");
    }
  }
  return out;
}

// Raw flag values; only the ones given on the command line override the
// config file.
struct Flags {
  std::string config_path;
  std::string preset;
  double tau = 0;
  double gamma = 0;
  std::string lambdas;
  int steps = 0;
  std::uint64_t seed = 0;
  std::string noise;
  std::string disturbance;
  std::string variant;
  std::string mode;
  std::string coeffs;
  std::string out;
  std::string svg;
  std::string x0;
  int window_lo = 0;
  int window_hi = 0;
};

struct Registered {
  CLI::Option* preset;
  CLI::Option* tau;
  CLI::Option* gamma;
  CLI::Option* lambdas;
  CLI::Option* steps;
  CLI::Option* seed;
  CLI::Option* noise;
  CLI::Option* disturbance;
  CLI::Option* variant;
  CLI::Option* mode;
  CLI::Option* coeffs;
  CLI::Option* out;
  CLI::Option* svg;
  CLI::Option* x0;
  CLI::Option* window_lo;
  CLI::Option* window_hi;
};

Registered register_flags(CLI::App* app, Flags& f, bool with_gamma) {
  Registered r{};
  app->add_option("--config", f.config_path, "flat JSON config document (CLI flags win)");
  r.preset = app->add_option("--preset", f.preset, "plant preset");
  r.tau = app->add_option("--tau", f.tau, "discretization step");
  r.gamma = with_gamma ? app->add_option("--gamma", f.gamma, "target gain in (0, 1]") : nullptr;
  r.lambdas = app->add_option("--lambdas", f.lambdas, "comma-separated target eigenvalues");
  r.steps = app->add_option("--steps", f.steps, "number of steps");
  r.seed = app->add_option("--seed", f.seed, "seed for sampling and disturbances");
  r.noise = app->add_option("--noise", f.noise, "measurement noise on|off");
  r.disturbance = app->add_option("--disturbance", f.disturbance, "additive disturbance on|off");
  r.variant = app->add_option("--variant", f.variant, "minmax|plus_only|minus_only|swapped");
  r.mode = app->add_option("--mode", f.mode, "poly|series");
  r.coeffs = app->add_option("--coeffs", f.coeffs, "precomputed coefficient table");
  r.out = app->add_option("--out", f.out, "output path");
  r.svg = app->add_option("--svg", f.svg, "SVG chart path");
  r.x0 = app->add_option("--x0", f.x0, "true initial state, comma-separated");
  r.window_lo = app->add_option("--window-lo", f.window_lo, "first step of the averaging window");
  r.window_hi = app->add_option("--window-hi", f.window_hi, "last step of the averaging window");
  return r;
}

kkl::RunConfig resolve(const Flags& f, const Registered& r) {
  kkl::RunConfig cfg;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw kkl::ConfigError("cannot open config '" + f.config_path + "'");
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw kkl::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    kkl::apply_config_json(cfg, doc);
  }
  auto given = [](CLI::Option* o) { return o != nullptr && o->count() > 0; };
  try {
    if (given(r.preset)) cfg.preset = f.preset;
    if (given(r.tau)) cfg.tau = f.tau;
    if (given(r.gamma)) cfg.gamma = f.gamma;
    if (given(r.lambdas)) cfg.lambdas = parse_list(f.lambdas);
    if (given(r.steps)) cfg.steps = f.steps;
    if (given(r.seed)) cfg.seed = f.seed;
    if (given(r.noise)) cfg.noise = kkl::parse_toggle(f.noise);
    if (given(r.disturbance)) cfg.disturbance = kkl::parse_toggle(f.disturbance);
    if (given(r.variant)) cfg.variant = kkl::parse_recovery_variant(f.variant);
    if (given(r.mode)) cfg.mode = kkl::parse_transform_mode(f.mode);
    if (given(r.coeffs)) cfg.coeffs_path = f.coeffs;
    if (given(r.out)) cfg.out_path = f.out;
    if (given(r.svg)) cfg.svg_path = f.svg;
    if (given(r.window_lo)) cfg.window_lo = f.window_lo;
    if (given(r.window_hi)) cfg.window_hi = f.window_hi;
    if (given(r.x0)) {
      const auto v = parse_list(f.x0);
      cfg.x0 = Eigen::Map<const kkl::Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
  } catch (const kkl::ConfigError&) {
    throw;
  } catch (const kkl::Error& e) {
    throw kkl::ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

void print_summary(const kkl::RunSummary& s) {
  std::printf("gamma=%g violations=%d mean_width_x=%.6g final_width_x=%.6g decay_rate=%.6g max_residual=%.3g\n",
              s.gamma, s.violations, s.mean_width_x, s.final_width_x, s.decay_rate, s.max_residual);
  if (s.plant_left_box) {
    std::fprintf(stderr, "warning: plant state left the enlarged box at step %d\n", *s.plant_left_box);
  }
}

int cmd_run(const kkl::RunConfig& cfg) {
  const kkl::RunResult r = kkl::run_experiment(cfg);
  if (!cfg.out_path.empty()) {
    std::ofstream out(cfg.out_path, std::ios::binary);
    if (!out) throw kkl::ConfigError("cannot write '" + cfg.out_path + "'");
    kkl::write_csv(out, r.rows);
  }
  if (!cfg.svg_path.empty()) {
    std::ofstream out(cfg.svg_path, std::ios::binary);
    if (!out) throw kkl::ConfigError("cannot write '" + cfg.svg_path + "'");
    kkl::write_svg(out, r.rows, kkl::make_plant(cfg)->box_x_enlarged());
  }
  print_summary(r.summary);
  if (r.summary.violations > 0) {
    std::fprintf(stderr, "enclosure violated at step %ld\n", *r.summary.first_violation);
    return kExitViolation;
  }
  return 0;
}

int cmd_compare(const kkl::RunConfig& cfg, const std::string& gammas) {
  const auto table = kkl::compare_gammas(cfg, parse_list(gammas));
  std::ostringstream out;
  out << "gamma,mean_width_x,final_width_x,decay_rate,violations\n";
  for (const auto& s : table) {
    out << kkl::format_double(s.gamma) << ',' << kkl::format_double(s.mean_width_x) << ','
        << kkl::format_double(s.final_width_x) << ',' << kkl::format_double(s.decay_rate) << ','
        << s.violations << '\n';
  }
  if (!cfg.out_path.empty()) {
    std::ofstream f(cfg.out_path, std::ios::binary);
    if (!f) throw kkl::ConfigError("cannot write '" + cfg.out_path + "'");
    f << out.str();
  }
  std::cout << out.str();
  return 0;
}

int cmd_constants(const kkl::RunConfig& cfg) {
  const kkl::Pipeline p = kkl::build_pipeline(cfg);
  auto doc = kkl::constants_json(p.consts, p.gamma_star, p.transform_consts);
  doc["gamma"] = cfg.gamma;
  doc["series_terms"] = p.transform->series_terms();
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_coeffs(const kkl::RunConfig& cfg) {
  const auto plant = kkl::make_plant(cfg);
  const auto t = kkl::KklTransform::polynomial(plant, kkl::TargetSystem::diagonal(cfg.lambdas, cfg.gamma),
                                               kkl::quadratic_basis_2d());
  if (cfg.out_path.empty()) {
    kkl::write_coefficients(std::cout, t);
  } else {
    std::ofstream out(cfg.out_path, std::ios::binary);
    if (!out) throw kkl::ConfigError("cannot write '" + cfg.out_path + "'");
    kkl::write_coefficients(out, t);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interval observer built on a KKL transformation"};
  app.require_subcommand(1);

  Flags run_flags;
  auto* run = app.add_subcommand("run", "simulate plant and observer, write a CSV trace");
  const Registered run_reg = register_flags(run, run_flags, true);

  Flags cmp_flags;
  std::string gammas = "1.0,0.7";
  auto* cmp = app.add_subcommand("compare", "run once per gamma and tabulate widths");
  const Registered cmp_reg = register_flags(cmp, cmp_flags, false);
  cmp->add_option("--gammas", gammas, "comma-separated gains");

  Flags const_flags;
  auto* consts = app.add_subcommand("constants", "print the estimated system constants as JSON");
  const Registered const_reg = register_flags(consts, const_flags, true);

  Flags coeff_flags;
  auto* coeffs = app.add_subcommand("coeffs", "solve the polynomial transform and export its table");
  const Registered coeff_reg = register_flags(coeffs, coeff_flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(resolve(run_flags, run_reg));
    if (*cmp) return cmd_compare(resolve(cmp_flags, cmp_reg), gammas);
    if (*consts) return cmd_constants(resolve(const_flags, const_reg));
    if (*coeffs) return cmd_coeffs(resolve(coeff_flags, coeff_reg));
  } catch (const kkl::EnclosureViolation& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitViolation;
  } catch (const kkl::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const kkl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
