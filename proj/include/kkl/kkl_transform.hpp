#pragma once

// The KKL transformation T solving T(f(x)) = A T(x) + B h(x) for the target
// pair A = γ blockdiag(Ã_i), B = blockdiag(B̃_i), its constants, and a
// numerical left inverse T*.

#include "kkl/coord_change.hpp"
#include "kkl/interval_core.hpp"
#include "kkl/plant.hpp"
#include "kkl/polynomial.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace kkl {

// ---------------------------------------------------------------------------
// Target system

/// One output channel: Ã_i = blockdiag(blocks) and input vector B̃_i.
struct TargetChannel {
  std::vector<CanonicalBlock> blocks;
  Vec b;

  int order() const {
    int m = 0;
    for (const auto& blk : blocks) m += blk.dim();
    return m;
  }
  Mat a_tilde() const {
    std::vector<Mat> parts;
    for (const auto& blk : blocks) parts.push_back(blk.matrix());
    return block_diag(parts);
  }
};

/// C = [B, A B, ..., A^{m-1} B].
inline Mat controllability_matrix(const Mat& a, const Vec& b) {
  const Eigen::Index m = a.rows();
  Mat c(m, m);
  Vec col = b;
  for (Eigen::Index j = 0; j < m; ++j) {
    c.col(j) = col;
    col = a * col;
  }
  return c;
}

class TargetSystem {
 public:
  TargetSystem(std::vector<TargetChannel> channels, double gamma)
      : channels_(std::move(channels)), gamma_(gamma) {
    if (channels_.empty()) throw Error("TargetSystem: need at least one channel");
    if (!(gamma_ > 0.0 && gamma_ <= 1.0)) throw Error("TargetSystem: gamma must lie in (0, 1]");
    std::vector<Mat> a_parts;
    std::vector<Mat> b_parts;
    for (const auto& ch : channels_) {
      if (ch.blocks.empty()) throw Error("TargetSystem: empty channel");
      for (const auto& blk : ch.blocks) {
        if (!(blk.modulus() < 1.0)) throw Error("TargetSystem: Ã_i must be Schur");
      }
      if (ch.b.size() != ch.order()) throw DimensionError("TargetSystem: B̃_i has wrong length");
      const Mat a = ch.a_tilde();
      Eigen::FullPivLU<Mat> lu(controllability_matrix(a, ch.b));
      if (!lu.isInvertible()) throw Error("TargetSystem: (Ã_i, B̃_i) is not controllable");
      a_parts.push_back(a);
      b_parts.push_back(ch.b);
      orders_.push_back(ch.order());
    }
    a_tilde_ = block_diag(a_parts);
    b_ = block_diag(b_parts);
  }

  /// The single-output, diagonal configuration: Ã = diag(λ), B̃ = (1, ..., 1).
  static TargetSystem diagonal(const std::vector<double>& lambdas, double gamma) {
    TargetChannel ch;
    for (double l : lambdas) ch.blocks.push_back(CanonicalBlock::real(l));
    ch.b = Vec::Ones(static_cast<Eigen::Index>(lambdas.size()));
    return TargetSystem({ch}, gamma);
  }

  TargetSystem with_gamma(double gamma) const { return TargetSystem(channels_, gamma); }

  const std::vector<TargetChannel>& channels() const { return channels_; }
  double gamma() const { return gamma_; }
  const std::vector<int>& orders() const { return orders_; }
  int m_bar() const { return *std::max_element(orders_.begin(), orders_.end()); }
  int n_z() const { return static_cast<int>(a_tilde_.rows()); }
  int n_y() const { return static_cast<int>(channels_.size()); }
  const Mat& a_tilde() const { return a_tilde_; }
  Mat A() const { return gamma_ * a_tilde_; }
  const Mat& B() const { return b_; }

  std::vector<CanonicalBlock> canonical_blocks() const {
    std::vector<CanonicalBlock> out;
    for (const auto& ch : channels_) out.insert(out.end(), ch.blocks.begin(), ch.blocks.end());
    return out;
  }

  double max_block_norm() const {
    double n = 0.0;
    for (const auto& ch : channels_) n = std::max(n, op_inf_norm(ch.a_tilde()));
    return n;
  }
  double max_input_norm() const {
    double n = 0.0;
    for (const auto& ch : channels_) n = std::max(n, inf_norm(ch.b));
    return n;
  }

  /// c_c with ||C_i^{-1}|| <= 1 / c_c for every channel.
  double controllability_constant() const {
    double worst = 0.0;
    for (const auto& ch : channels_) {
      const Mat c_inv = controllability_matrix(ch.a_tilde(), ch.b).inverse();
      worst = std::max(worst, op_inf_norm(c_inv));
    }
    return 1.0 / worst;
  }

 private:
  std::vector<TargetChannel> channels_;
  double gamma_;
  std::vector<int> orders_;
  Mat a_tilde_;
  Mat b_;
};

inline CoordChangeSeq build_coord_change(const TargetSystem& target) {
  return build_coord_change(target.canonical_blocks(), target.gamma());
}

// ---------------------------------------------------------------------------
// Constants

/// Largest gain for which the closed-form injectivity bound stays positive:
///   min{ 1/||Ã||, 1/(max||Ã_i|| c_f),
///        c_c c_o / (max||Ã_i|| c_f c_c c_o + max||B̃_i|| c_h c_f max (||Ã_i|| c_f)^{m_i}) }
/// capped at 1.
inline double gamma_star(const SystemConstants& k, const TargetSystem& target) {
  if (!(k.c_f > 0 && k.c_h > 0 && k.c_o > 0 && k.c_c > 0)) {
    throw Error("gamma_star: constants must be positive");
  }
  const double a_norm = op_inf_norm(target.a_tilde());
  const double a_max = target.max_block_norm();
  const double b_max = target.max_input_norm();
  double pow_max = 0.0;
  for (const auto& ch : target.channels()) {
    pow_max = std::max(pow_max, std::pow(op_inf_norm(ch.a_tilde()) * k.c_f, ch.order()));
  }
  const double inf = std::numeric_limits<double>::infinity();
  const double t1 = a_norm > 0.0 ? 1.0 / a_norm : inf;
  const double t2 = a_max > 0.0 ? 1.0 / (a_max * k.c_f) : inf;
  const double cc_co = k.c_c * k.c_o;
  const double t3 = cc_co / (a_max * k.c_f * cc_co + b_max * k.c_h * k.c_f * pow_max);
  return std::min({t1, t2, t3, 1.0});
}

struct DerivedConstants {
  double c_L = 0.0;
  double c_I = 0.0;
  double c = 0.0;
};

class InjectivityNotGuaranteed : public Error {
 public:
  InjectivityNotGuaranteed() : Error("injectivity not guaranteed: gamma >= gamma*") {}
};

/// Closed-form c_L, c_I and c = 1/c_I for a gain below gamma*.
inline DerivedConstants derived_constants(const SystemConstants& k, const TargetSystem& target,
                                          double gamma) {
  if (!(gamma > 0.0) || gamma >= gamma_star(k, target)) throw InjectivityNotGuaranteed();
  const double a_max = target.max_block_norm();
  const double b_max = target.max_input_norm();
  double pow_max = 0.0;
  for (const auto& ch : target.channels()) {
    pow_max = std::max(pow_max, std::pow(op_inf_norm(ch.a_tilde()) * k.c_f, ch.order()));
  }
  const double contraction = 1.0 - gamma * a_max * k.c_f;
  DerivedConstants out;
  out.c_L = b_max * k.c_h * k.c_f / contraction;
  out.c_I = k.c_N * (k.c_c * k.c_o - b_max * k.c_h * k.c_f * gamma * pow_max / contraction);
  out.c = 1.0 / out.c_I;
  return out;
}

// ---------------------------------------------------------------------------
// Transform

enum class TransformMode { Series, Polynomial };

class KklTransform {
 public:
  /// Truncated series T(x) = Σ_{i<N} A^i B h(f^{-(i+1)}(x)); N is picked from
  /// the geometric tail bound (γ||Ã||)^N / (1 - γ||Ã||) ||B|| H_max <= tol.
  static KklTransform series(std::shared_ptr<const PlantModel> plant, TargetSystem target,
                             double series_tol = 1e-9) {
    check_pair(*plant, target);
    if (!(series_tol > 0.0)) throw Error("series transform: tolerance must be positive");
    KklTransform t(std::move(plant), std::move(target), TransformMode::Series);
    t.series_tol_ = series_tol;
    const double rate = t.target_.gamma() * op_inf_norm(t.target_.a_tilde());
    if (rate >= 1.0) throw Error("series transform: gamma*||Ã|| >= 1, series may diverge");
    t.h_max_ = kUpperSafety * sup_output_norm(*t.plant_);
    const double b_norm = op_inf_norm(t.target_.B());
    int n = 1;
    if (rate > 0.0) {
      while (std::pow(rate, n) / (1.0 - rate) * b_norm * t.h_max_ > series_tol && n < 100000) ++n;
    }
    t.series_terms_ = n;
    return t;
  }

  /// Exact polynomial T over a monomial basis, from the coefficient matching
  /// of T(f(x)) = A T(x) + B h(x).
  static KklTransform polynomial(std::shared_ptr<const PlantModel> plant, TargetSystem target,
                                 std::vector<Exponents> basis);

  /// Polynomial T from a previously solved coefficient table (rows = n_z).
  static KklTransform from_coefficients(std::shared_ptr<const PlantModel> plant,
                                        TargetSystem target, std::vector<Exponents> basis,
                                        Mat coeffs) {
    check_pair(*plant, target);
    if (coeffs.rows() != target.n_z() || coeffs.cols() != static_cast<Eigen::Index>(basis.size())) {
      throw DimensionError("polynomial transform: coefficient table has wrong shape");
    }
    for (const auto& e : basis) {
      if (static_cast<int>(e.size()) != plant->n_x()) {
        throw DimensionError("polynomial transform: exponent tuple has wrong arity");
      }
    }
    KklTransform t(std::move(plant), std::move(target), TransformMode::Polynomial);
    t.basis_ = std::move(basis);
    t.coeffs_ = std::move(coeffs);
    return t;
  }

  TransformMode mode() const { return mode_; }
  const TargetSystem& target() const { return target_; }
  const PlantModel& plant() const { return *plant_; }
  std::shared_ptr<const PlantModel> plant_ptr() const { return plant_; }
  int n_z() const { return target_.n_z(); }
  int n_x() const { return plant_->n_x(); }
  double series_tol() const { return series_tol_; }
  int series_terms() const { return series_terms_; }
  double h_max() const { return h_max_; }
  const std::vector<Exponents>& basis() const { return basis_; }
  const Mat& coeffs() const { return coeffs_; }

  Vec eval(const Vec& x) const {
    if (x.size() != n_x()) throw DimensionError("KklTransform::eval: wrong state size");
    if (mode_ == TransformMode::Polynomial) return coeffs_ * monomials(x);
    const Mat A = target_.A();
    Mat a_pow_b = target_.B();
    Vec acc = Vec::Zero(n_z());
    Vec back = x;
    for (int i = 0; i < series_terms_; ++i) {
      back = plant_->f_inv_clamped(back);
      acc += a_pow_b * plant_->h(back);
      a_pow_b = A * a_pow_b;
    }
    return acc;
  }

  /// Analytic in polynomial mode, central differences (relative step 1e-6)
  /// in series mode.
  Mat jacobian(const Vec& x) const {
    if (mode_ == TransformMode::Polynomial) {
      Mat dm(static_cast<Eigen::Index>(basis_.size()), n_x());
      for (std::size_t b = 0; b < basis_.size(); ++b) {
        dm.row(static_cast<Eigen::Index>(b)) = Polynomial::monomial(basis_[b]).grad(x).transpose();
      }
      return coeffs_ * dm;
    }
    Mat jac(n_z(), n_x());
    for (int j = 0; j < n_x(); ++j) {
      const double step = 1e-6 * std::max(1.0, std::abs(x(j)));
      Vec xp = x;
      Vec xm = x;
      xp(j) += step;
      xm(j) -= step;
      jac.col(j) = (eval(xp) - eval(xm)) / (2.0 * step);
    }
    return jac;
  }

  /// T(f(x)) - A T(x) - B h(x).
  Vec sylvester_residual(const Vec& x) const {
    return eval(plant_->f(x)) - target_.A() * eval(x) - target_.B() * plant_->h(x);
  }

 private:
  KklTransform(std::shared_ptr<const PlantModel> plant, TargetSystem target, TransformMode mode)
      : plant_(std::move(plant)), target_(std::move(target)), mode_(mode) {}

  static void check_pair(const PlantModel& plant, const TargetSystem& target) {
    if (target.n_y() != plant.n_y()) {
      throw DimensionError("KklTransform: one target channel per plant output required");
    }
  }

  static double sup_output_norm(const PlantModel& plant) {
    const Box& box = plant.box_x_enlarged();
    const int n = plant.n_x();
    const int per_axis = n <= 2 ? 101 : (n <= 4 ? 11 : 3);
    double best = 0.0;
    std::vector<int> idx(n, 0);
    for (;;) {
      Vec x(n);
      for (int i = 0; i < n; ++i) {
        x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * idx[i] / (per_axis - 1);
      }
      best = std::max(best, inf_norm(plant.h(x)));
      int i = 0;
      while (i < n && ++idx[i] == per_axis) idx[i++] = 0;
      if (i == n) break;
    }
    return best;
  }

  Vec monomials(const Vec& x) const {
    Vec m(static_cast<Eigen::Index>(basis_.size()));
    for (std::size_t b = 0; b < basis_.size(); ++b) {
      double v = 1.0;
      for (int i = 0; i < n_x(); ++i) {
        for (int p = 0; p < basis_[b][i]; ++p) v *= x(i);
      }
      m(static_cast<Eigen::Index>(b)) = v;
    }
    return m;
  }

  std::shared_ptr<const PlantModel> plant_;
  TargetSystem target_;
  TransformMode mode_;
  double series_tol_ = 0.0;
  int series_terms_ = 0;
  double h_max_ = 0.0;
  std::vector<Exponents> basis_;
  Mat coeffs_;
};

/// Raised when the monomial basis does not contain every monomial of b∘f
/// or of h.
class BasisNotClosed : public Error {
 public:
  using Error::Error;
};

class ResonantTarget : public Error {
 public:
  ResonantTarget() : Error("coefficient system is singular (resonant target eigenvalue)") {}
};

/// Coefficients C (n_z × |basis|) with T(x) = C m(x).
inline Mat solve_poly_T(const PlantModel& plant, const TargetSystem& target,
                        const std::vector<Exponents>& basis) {
  const auto& poly = plant.polynomial_form();
  if (!poly) throw Error("solve_poly_T: plant has no polynomial form");
  const int n = plant.n_x();
  const auto nb = static_cast<Eigen::Index>(basis.size());
  if (nb == 0) throw Error("solve_poly_T: empty basis");
  std::map<Exponents, Eigen::Index> index;
  for (Eigen::Index b = 0; b < nb; ++b) {
    if (static_cast<int>(basis[b].size()) != n) {
      throw DimensionError("solve_poly_T: exponent tuple has wrong arity");
    }
    if (!index.emplace(basis[b], b).second) throw Error("solve_poly_T: duplicate monomial");
  }

  // Coordinates of a polynomial in the basis; anything outside it is an error.
  auto coordinates = [&](const Polynomial& p, const char* what) {
    double scale = 0.0;
    for (const auto& [e, c] : p.terms()) scale = std::max(scale, std::abs(c));
    Vec v = Vec::Zero(nb);
    const Polynomial kept = p.pruned(1e-13 * scale);
    for (const auto& [e, c] : kept.terms()) {
      auto it = index.find(e);
      if (it == index.end()) {
        throw BasisNotClosed(std::string("solve_poly_T: basis not closed under ") + what);
      }
      v(it->second) = c;
    }
    return v;
  };

  // comp(:, b) = coordinates of basis_b ∘ f; hc(j, :) = coordinates of h_j.
  Mat comp(nb, nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    comp.col(b) = coordinates(Polynomial::monomial(basis[b]).compose(poly->f), "composition with f");
  }
  Mat hc(plant.n_y(), nb);
  for (int j = 0; j < plant.n_y(); ++j) hc.row(j) = coordinates(poly->h[j], "the output map").transpose();

  // Unknown C(r, b) at r * nb + b. Row (r, m):
  //   Σ_b C(r,b) comp(m,b) - Σ_s A(r,s) C(s,m) = (B hc)(r,m).
  const Mat A = target.A();
  const Mat rhs_m = target.B() * hc;
  const Eigen::Index nz = target.n_z();
  Mat sys = Mat::Zero(nz * nb, nz * nb);
  Vec rhs(nz * nb);
  for (Eigen::Index r = 0; r < nz; ++r) {
    for (Eigen::Index m = 0; m < nb; ++m) {
      const Eigen::Index row = r * nb + m;
      for (Eigen::Index b = 0; b < nb; ++b) sys(row, r * nb + b) += comp(m, b);
      for (Eigen::Index s = 0; s < nz; ++s) sys(row, s * nb + m) -= A(r, s);
      rhs(row) = rhs_m(r, m);
    }
  }
  Eigen::FullPivLU<Mat> lu(sys);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw ResonantTarget();
  const Vec sol = lu.solve(rhs);
  Mat coeffs(nz, nb);
  for (Eigen::Index r = 0; r < nz; ++r) coeffs.row(r) = sol.segment(r * nb, nb).transpose();
  return coeffs;
}

inline KklTransform KklTransform::polynomial(std::shared_ptr<const PlantModel> plant,
                                             TargetSystem target, std::vector<Exponents> basis) {
  check_pair(*plant, target);
  Mat coeffs = solve_poly_T(*plant, target, basis);
  return from_coefficients(std::move(plant), std::move(target), std::move(basis), std::move(coeffs));
}

/// The quadratic basis {x1^2, x2^2, x1 x2, x1, x2} of the oscillator example.
inline std::vector<Exponents> quadratic_basis_2d() {
  return {{2, 0}, {0, 2}, {1, 1}, {1, 0}, {0, 1}};
}

// ---------------------------------------------------------------------------
// Coefficient table: one line per (row, monomial), "row e1,e2,... coeff".

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_coefficients(std::ostream& out, const KklTransform& t) {
  if (t.mode() != TransformMode::Polynomial) throw Error("write_coefficients: not a polynomial transform");
  out << "# row exponents coefficient\n";
  for (Eigen::Index r = 0; r < t.coeffs().rows(); ++r) {
    for (std::size_t b = 0; b < t.basis().size(); ++b) {
      out << r << ' ';
      for (std::size_t i = 0; i < t.basis()[b].size(); ++i) {
        out << (i ? "," : "") << t.basis()[b][i];
      }
      out << ' ' << format_double(t.coeffs()(r, static_cast<Eigen::Index>(b))) << '\n';
    }
  }
}

struct CoefficientTable {
  std::vector<Exponents> basis;
  Mat coeffs;
};

inline CoefficientTable read_coefficients(std::istream& in) {
  std::map<Exponents, Eigen::Index> index;
  std::vector<Exponents> basis;
  std::vector<std::tuple<int, Eigen::Index, double>> entries;
  int max_row = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int row = 0;
    std::string exps;
    std::string coeff_text;
    if (!(ls >> row >> exps >> coeff_text) || row < 0) {
      throw Error("read_coefficients: malformed line " + std::to_string(lineno));
    }
    Exponents e;
    std::istringstream es(exps);
    std::string part;
    while (std::getline(es, part, ',')) {
      int v = 0;
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || p != part.data() + part.size() || v < 0) {
        throw Error("read_coefficients: bad exponent on line " + std::to_string(lineno));
      }
      e.push_back(v);
    }
    double c = 0.0;
    try {
      std::size_t used = 0;
      c = std::stod(coeff_text, &used);
      if (used != coeff_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error("read_coefficients: bad coefficient on line " + std::to_string(lineno));
    }
    auto [it, inserted] = index.emplace(e, static_cast<Eigen::Index>(basis.size()));
    if (inserted) basis.push_back(e);
    entries.emplace_back(row, it->second, c);
    max_row = std::max(max_row, row);
  }
  if (max_row < 0) throw Error("read_coefficients: empty table");
  Mat coeffs = Mat::Zero(max_row + 1, static_cast<Eigen::Index>(basis.size()));
  for (const auto& [r, b, c] : entries) coeffs(r, b) = c;
  return {std::move(basis), std::move(coeffs)};
}

// ---------------------------------------------------------------------------
// Constants measured on T directly

struct TransformConstantOptions {
  int grid_per_axis = 61;
  int pair_samples = 10000;
  int refine_starts = 8;
  std::uint64_t seed = 7;
};

/// c_L = upper Lipschitz constant of T, kappa = c_I γ^{m̄-1} = lower
/// injectivity constant, both in the infinity norm and on `box`.
struct TransformConstants {
  double c_L = 0.0;
  double kappa = 0.0;
  double c_I = 0.0;
  double c = 0.0;
  /// c / γ^{m̄-1} = 1 / kappa.
  double margin() const { return 1.0 / kappa; }
};

/// Grid + pattern-search minimum of σ_min(J)/√n_z (a lower bound of the
/// infinity-norm injectivity ratio), grid maximum of ||J||∞, and random pair
/// difference quotients; then 0.9 / 1.1 safety factors. For quadratic T the
/// pair quotient equals the Jacobian at the midpoint, so the Jacobian
/// extrema bound every pair on a convex box.
inline TransformConstants estimate_transform_constants(const KklTransform& t, const Box& box,
                                                       const TransformConstantOptions& opt = {}) {
  if (box.degenerate()) throw Error("estimate_transform_constants: degenerate box");
  const int n = t.n_x();
  const double inv_sqrt_nz = 1.0 / std::sqrt(static_cast<double>(t.n_z()));
  auto lower = [&](const Vec& x) {
    Eigen::JacobiSVD<Mat> svd(t.jacobian(x));
    return svd.singularValues().minCoeff() * inv_sqrt_nz;
  };

  const int g = std::max(2, opt.grid_per_axis);
  std::vector<std::pair<double, Vec>> grid_low;
  double upper = 0.0;
  std::vector<int> idx(n, 0);
  for (;;) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * idx[i] / (g - 1);
    upper = std::max(upper, op_inf_norm(t.jacobian(x)));
    grid_low.emplace_back(lower(x), x);
    int i = 0;
    while (i < n && ++idx[i] == g) idx[i++] = 0;
    if (i == n) break;
  }
  const auto k = std::min<std::size_t>(std::max(1, opt.refine_starts), grid_low.size());
  std::partial_sort(grid_low.begin(), grid_low.begin() + static_cast<std::ptrdiff_t>(k), grid_low.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });
  double low = grid_low.front().first;
  const double min_width = box.widths().minCoeff();
  for (std::size_t s = 0; s < k; ++s) {
    Vec x = grid_low[s].second;
    double fx = grid_low[s].first;
    double step = min_width / (g - 1);
    while (step > 1e-12 * min_width) {
      bool moved = false;
      for (int i = 0; i < n && !moved; ++i) {
        for (double dir : {1.0, -1.0}) {
          Vec cand = x;
          cand(i) += dir * step;
          cand = box.clamp(cand);
          const double fc = lower(cand);
          if (fc < fx) {
            x = cand;
            fx = fc;
            moved = true;
            break;
          }
        }
      }
      if (!moved) step *= 0.5;
    }
    low = std::min(low, fx);
  }

  std::mt19937_64 rng(opt.seed);
  for (int s = 0; s < opt.pair_samples; ++s) {
    const Vec xa = detail::sample_in(box, rng);
    const Vec xb = detail::sample_in(box, rng);
    const double dx = inf_norm(xa - xb);
    if (dx == 0.0) continue;
    const double ratio = inf_norm(t.eval(xa) - t.eval(xb)) / dx;
    low = std::min(low, ratio);
    upper = std::max(upper, ratio);
  }
  if (!(low > 0.0)) throw Error("estimate_transform_constants: T is not injective on the box");

  TransformConstants out;
  out.c_L = kUpperSafety * upper;
  out.kappa = kLowerSafety * low;
  out.c_I = out.kappa / std::pow(t.target().gamma(), t.target().m_bar() - 1);
  out.c = 1.0 / out.c_I;
  return out;
}

// ---------------------------------------------------------------------------
// Numerical left inverse

struct InverseConfig {
  int starts = 3;  ///< lattice points per axis; starts^{n_x} lattice starts
  int max_starts = 31;  ///< lattices grow 2s+1 per axis up to this while tol is missed
  int max_iters = 200;
  double tol = 1e-12;  ///< stop once ||T(x) - z||∞ <= tol
  std::optional<Box> box;  ///< defaults to the plant's enlarged box
  std::optional<Vec> warm_start;
};

struct InverseResult {
  Vec x;
  double residual = 0.0;  ///< ||T(x) - z||∞
  int iterations = 0;
};

namespace detail {

// Box-projected Levenberg-Marquardt on 0.5 ||T(x) - z||_2^2.
inline InverseResult levenberg_marquardt(const KklTransform& t, const Vec& z, Vec x,
                                         const Box& box, const InverseConfig& cfg) {
  x = box.clamp(x);
  Vec r = t.eval(x) - z;
  double cost = r.squaredNorm();
  double mu = -1.0;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (inf_norm(r) <= cfg.tol) break;
    const Mat J = t.jacobian(x);
    const Vec diag = (J.transpose() * J).diagonal().cwiseMax(1e-12);
    if (mu < 0.0) mu = 1e-3 * diag.maxCoeff();
    bool accepted = false;
    while (!accepted && mu < 1e30) {
      Mat aug(J.rows() + J.cols(), J.cols());
      aug << J, (mu * diag).cwiseSqrt().asDiagonal().toDenseMatrix();
      Vec rhs(J.rows() + J.cols());
      rhs << -r, Vec::Zero(J.cols());
      const Vec delta = aug.colPivHouseholderQr().solve(rhs);
      const Vec x_new = box.clamp(x + delta);
      const Vec r_new = t.eval(x_new) - z;
      const double cost_new = r_new.squaredNorm();
      if (cost_new < cost) {
        const double moved = inf_norm(x_new - x);
        x = x_new;
        r = r_new;
        cost = cost_new;
        mu = std::max(mu / 3.0, 1e-300);
        accepted = true;
        if (moved <= 1e-16 * (1.0 + inf_norm(x))) it = cfg.max_iters;
      } else {
        mu *= 4.0;
      }
    }
    if (!accepted) break;
  }
  return {x, inf_norm(r), it};
}

// Lower residual wins; near-equal residuals fall back to the smaller
// infinity norm, then lexicographic order.
inline bool better(const InverseResult& a, const InverseResult& b) {
  const double scale = std::max({a.residual, b.residual, 1e-300});
  if (std::abs(a.residual - b.residual) > 1e-9 * scale) return a.residual < b.residual;
  const double na = inf_norm(a.x);
  const double nb = inf_norm(b.x);
  if (na != nb) return na < nb;
  return std::lexicographical_compare(a.x.data(), a.x.data() + a.x.size(), b.x.data(),
                                      b.x.data() + b.x.size());
}

}  // namespace detail

/// argmin over the search box of ||T(x) - z||: warm start first, then a
/// fixed starts^{n_x} lattice of cell centres when the warm start does not
/// reach tol. Deterministic.
inline InverseResult invert_T(const KklTransform& t, const Vec& z, const InverseConfig& cfg = {}) {
  if (cfg.starts < 1) throw Error("invert_T: starts must be >= 1");
  if (!(cfg.tol > 0.0)) throw Error("invert_T: tol must be positive");
  if (z.size() != t.n_z()) throw DimensionError("invert_T: wrong target size");
  const Box box = cfg.box.value_or(t.plant().box_x_enlarged());
  std::optional<InverseResult> best;
  auto consider = [&](InverseResult r) {
    if (!best || detail::better(r, *best)) best = std::move(r);
  };
  if (cfg.warm_start) {
    consider(detail::levenberg_marquardt(t, z, *cfg.warm_start, box, cfg));
    if (best->residual <= cfg.tol) return *best;
  }
  const int n = t.n_x();
  auto lattice = [&](int per_axis) {
    std::vector<int> idx(n, 0);
    for (;;) {
      Vec x(n);
      for (int i = 0; i < n; ++i) {
        x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * (idx[i] + 0.5) / per_axis;
      }
      consider(detail::levenberg_marquardt(t, z, x, box, cfg));
      int i = 0;
      while (i < n && ++idx[i] == per_axis) idx[i++] = 0;
      if (i == n) break;
    }
  };
  for (int s = cfg.starts;; s = 2 * s + 1) {
    lattice(s);
    if (best->residual <= cfg.tol || 2 * s + 1 > cfg.max_starts) break;
  }
  return *best;
}

}  // namespace kkl
