#pragma once

// Discrete-time plant x+ = f(x) + d, y = h(x) + w together with its inverse
// dynamics, the boxes it lives in, and sampling estimators for the
// Lipschitz / backward-distinguishability constants.

#include "kkl/interval_core.hpp"
#include "kkl/polynomial.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace kkl {

using VecMap = std::function<Vec(const Vec&)>;
/// k -> vector. Noise bounds are closures over the time index.
using Sequence = std::function<Vec(int)>;

inline Sequence zero_sequence(Eigen::Index n) {
  return [n](int) { return Vec::Zero(n); };
}

/// Component polynomials of f and h, when the plant has them.
struct PolynomialForm {
  std::vector<Polynomial> f;
  std::vector<Polynomial> h;
};

class PlantModel {
 public:
  PlantModel(std::string name, int n_x, int n_y, VecMap f, VecMap f_inv, VecMap h,
             Box box_x, Box box_x0, Box box_x_enlarged,
             std::optional<PolynomialForm> poly = std::nullopt)
      : name_(std::move(name)),
        n_x_(n_x),
        n_y_(n_y),
        f_(std::move(f)),
        f_inv_(std::move(f_inv)),
        h_(std::move(h)),
        box_x_(std::move(box_x)),
        box_x0_(std::move(box_x0)),
        box_x_enlarged_(std::move(box_x_enlarged)),
        poly_(std::move(poly)) {
    if (n_x_ <= 0 || n_y_ <= 0) throw Error("PlantModel: dimensions must be positive");
    if (!f_ || !f_inv_ || !h_) throw Error("PlantModel: f, f_inv and h are required");
    if (box_x_.dim() != n_x_ || box_x0_.dim() != n_x_ || box_x_enlarged_.dim() != n_x_) {
      throw DimensionError("PlantModel: box dimension differs from n_x");
    }
    if (!box_x_.contains(box_x0_) || !box_x_enlarged_.contains(box_x_)) {
      throw Error("PlantModel: boxes must be nested X0 ⊆ X ⊆ X_enlarged");
    }
    if (poly_ && (static_cast<int>(poly_->f.size()) != n_x_ ||
                  static_cast<int>(poly_->h.size()) != n_y_)) {
      throw DimensionError("PlantModel: polynomial form has wrong component count");
    }
  }

  const std::string& name() const { return name_; }
  int n_x() const { return n_x_; }
  int n_y() const { return n_y_; }
  const Box& box_x() const { return box_x_; }
  const Box& box_x0() const { return box_x0_; }
  const Box& box_x_enlarged() const { return box_x_enlarged_; }
  const std::optional<PolynomialForm>& polynomial_form() const { return poly_; }

  Vec f(const Vec& x) const { return f_(x); }
  Vec f_inv(const Vec& x) const { return f_inv_(x); }
  Vec h(const Vec& x) const { return h_(x); }

  /// f^{-1} saturated to the enlarged box; the form used by every backward
  /// chain (series transform, distinguishability map).
  Vec f_inv_clamped(const Vec& x) const { return box_x_enlarged_.clamp(f_inv_(x)); }

 private:
  std::string name_;
  int n_x_;
  int n_y_;
  VecMap f_;
  VecMap f_inv_;
  VecMap h_;
  Box box_x_;
  Box box_x0_;
  Box box_x_enlarged_;
  std::optional<PolynomialForm> poly_;
};

/// Known bounds on the measurement noise w_k and the additive disturbance d_k.
struct NoiseSpec {
  Sequence w_lo;
  Sequence w_hi;
  Sequence d_lo;
  Sequence d_hi;

  static NoiseSpec none(int n_x, int n_y) {
    return {zero_sequence(n_y), zero_sequence(n_y), zero_sequence(n_x),
            zero_sequence(n_x)};
  }
};

/// The realized (unknown to the observer) noise sequences.
struct NoiseRealization {
  Sequence w;
  Sequence d;

  static NoiseRealization none(int n_x, int n_y) {
    return {zero_sequence(n_y), zero_sequence(n_x)};
  }
};

struct PlantTrace {
  std::vector<Vec> x;
  std::vector<Vec> y;
  std::vector<Vec> w;
  std::vector<Vec> d;
  /// First step whose state lies outside the enlarged box, if any.
  std::optional<int> left_enlarged_box;
};

/// Runs x_{k+1} = f(x_k) + d_k, y_k = h(x_k) + w_k. The trace holds
/// steps + 1 states and outputs (k = 0..steps).
inline PlantTrace simulate_plant(const PlantModel& model, const Vec& x0,
                                 const NoiseRealization& noise, int steps) {
  if (steps < 0) throw Error("simulate_plant: steps must be nonnegative");
  if (!model.box_x0().contains(x0)) {
    throw Error("simulate_plant: x0 outside the initial box");
  }
  PlantTrace trace;
  trace.x.reserve(steps + 1);
  Vec x = x0;
  for (int k = 0;; ++k) {
    if (!trace.left_enlarged_box && !model.box_x_enlarged().contains(x)) {
      trace.left_enlarged_box = k;
    }
    const Vec w = noise.w(k);
    trace.x.push_back(x);
    trace.w.push_back(w);
    trace.y.push_back(model.h(x) + w);
    if (k == steps) break;
    const Vec d = noise.d(k);
    trace.d.push_back(d);
    x = model.f(x) + d;
  }
  return trace;
}

namespace detail {

inline Vec sample_in(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec x(box.dim());
  for (Eigen::Index i = 0; i < box.dim(); ++i) {
    x(i) = box.lo(i) + unit(rng) * (box.hi(i) - box.lo(i));
  }
  return x;
}

}  // namespace detail

struct LipschitzEstimate {
  double c_f = 0.0;  ///< Lipschitz constant of f^{-1}
  double c_h = 0.0;  ///< Lipschitz constant of h
};

inline constexpr double kUpperSafety = 1.1;
inline constexpr double kLowerSafety = 0.9;

/// Max difference quotients of f^{-1} and h over random pairs in the
/// enlarged box, inflated by 10%. Pairs are drawn sequentially from the
/// seed, so a larger sample count only adds pairs.
inline LipschitzEstimate estimate_lipschitz(const PlantModel& model, int samples,
                                            std::uint64_t seed) {
  if (samples < 2) throw Error("estimate_lipschitz: need at least 2 samples");
  const Box& box = model.box_x_enlarged();
  if (box.degenerate()) throw Error("estimate_lipschitz: degenerate box");
  std::mt19937_64 rng(seed);
  double rf = 0.0;
  double rh = 0.0;
  for (int s = 0; s < samples; ++s) {
    const Vec xa = detail::sample_in(box, rng);
    const Vec xb = detail::sample_in(box, rng);
    const double dx = inf_norm(xa - xb);
    if (dx == 0.0) continue;
    rf = std::max(rf, inf_norm(model.f_inv(xa) - model.f_inv(xb)) / dx);
    rh = std::max(rh, inf_norm(model.h(xa) - model.h(xb)) / dx);
  }
  return {kUpperSafety * rf, kUpperSafety * rh};
}

/// Stacks h_i ∘ f^{-j}, j = 1..m_i, channel by channel. f^{-1} is the
/// saturated inverse.
inline Vec backward_distinguishability_map(const PlantModel& model,
                                           const std::vector<int>& m, const Vec& x) {
  if (static_cast<int>(m.size()) != model.n_y()) {
    throw DimensionError("backward map: need one order per output channel");
  }
  const int m_bar = *std::max_element(m.begin(), m.end());
  const int total = std::accumulate(m.begin(), m.end(), 0);
  // h(f^{-j}(x)) for j = 1..m_bar, then pick rows per channel.
  std::vector<Vec> outputs;
  outputs.reserve(m_bar);
  Vec back = x;
  for (int j = 0; j < m_bar; ++j) {
    back = model.f_inv_clamped(back);
    outputs.push_back(model.h(back));
  }
  Vec out(total);
  int row = 0;
  for (int i = 0; i < model.n_y(); ++i) {
    for (int j = 0; j < m[i]; ++j) out(row++) = outputs[j](i);
  }
  return out;
}

class NotDistinguishable : public Error {
 public:
  NotDistinguishable()
      : Error("not Lipschitz backward distinguishable at these orders") {}
};

/// Min over random pairs in X of ||O(x_a) - O(x_b)|| / ||x_a - x_b||,
/// deflated by 10%.
inline double estimate_c_o(const PlantModel& model, const std::vector<int>& m,
                           int samples, std::uint64_t seed) {
  if (samples < 1) throw Error("estimate_c_o: need at least one sample");
  for (int mi : m) {
    if (mi < 1) throw Error("estimate_c_o: orders must be >= 1");
  }
  const Box& box = model.box_x();
  if (box.degenerate()) throw Error("estimate_c_o: degenerate box");
  std::mt19937_64 rng(seed);
  double ratio = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    const Vec xa = detail::sample_in(box, rng);
    const Vec xb = detail::sample_in(box, rng);
    const double dx = inf_norm(xa - xb);
    if (dx == 0.0) continue;
    const double dO = inf_norm(backward_distinguishability_map(model, m, xa) -
                               backward_distinguishability_map(model, m, xb));
    ratio = std::min(ratio, dO / dx);
  }
  if (!std::isfinite(ratio) || ratio <= 1e-12) throw NotDistinguishable();
  return kLowerSafety * ratio;
}

/// Lipschitz / observability data of the plant plus the transform
/// constants c_L, c_I and c. With source == Formula the transform constants
/// come from the closed-form bounds (valid only for gamma < gamma*); with
/// TransformEstimate they are measured directly on T.
struct SystemConstants {
  enum class Source { Formula, TransformEstimate };

  double c_f = 0.0;
  double c_h = 0.0;
  double c_o = 0.0;
  double c_c = 0.0;
  double c_N = 1.0;  ///< norm-equivalence constant; 1 for the infinity norm
  std::vector<int> m;
  int m_bar = 0;
  double c_L = 0.0;
  double c_I = 0.0;
  double c = 0.0;
  Source source = Source::Formula;
};

// ---------------------------------------------------------------------------
// Presets

inline constexpr const char* kOscillatorPreset = "oscillator-siE";

struct OscillatorBoxes {
  Vec x0 = (Vec(2) << 1.0, 0.0).finished();
  double x0_half_width = 0.5;
  double x_half_width = 2.0;
  double enlarged_half_width = 3.0;
};

/// Semi-implicit Euler discretization of the harmonic oscillator with the
/// quadratic output y = x1^2 - x2^2 + x1 + x2.
///   f(x) = (x1 - tau x2, (1 - tau^2) x2 + tau x1),  det = 1.
inline PlantModel oscillator_sie(double tau = 0.1, const OscillatorBoxes& boxes = {}) {
  if (!(tau > 0.0)) throw Error("oscillator_sie: tau must be positive");
  auto f = [tau](const Vec& x) {
    Vec out(2);
    out << x(0) - tau * x(1), (1.0 - tau * tau) * x(1) + tau * x(0);
    return out;
  };
  auto f_inv = [tau](const Vec& x) {
    Vec out(2);
    out << (1.0 - tau * tau) * x(0) + tau * x(1), x(1) - tau * x(0);
    return out;
  };
  auto h = [](const Vec& x) {
    Vec out(1);
    out << x(0) * x(0) - x(1) * x(1) + x(0) + x(1);
    return out;
  };
  const Polynomial x1 = Polynomial::variable(2, 0);
  const Polynomial x2 = Polynomial::variable(2, 1);
  PolynomialForm poly;
  poly.f = {x1 - tau * x2, (1.0 - tau * tau) * x2 + tau * x1};
  poly.h = {x1 * x1 - x2 * x2 + x1 + x2};

  const Vec r0 = Vec::Constant(2, boxes.x0_half_width);
  return PlantModel(kOscillatorPreset, 2, 1, f, f_inv, h,
                    Box::symmetric(2, boxes.x_half_width),
                    Box(boxes.x0 - r0, boxes.x0 + r0),
                    Box::symmetric(2, boxes.enlarged_half_width), std::move(poly));
}

/// x+ = F x, y = H x with exact inverse. F must be invertible.
inline PlantModel linear_plant(const Mat& F, const Mat& H, Box box_x, Box box_x0,
                               Box box_x_enlarged, std::string name = "linear") {
  if (F.rows() != F.cols() || H.cols() != F.cols()) {
    throw DimensionError("linear_plant: nonconformable F/H");
  }
  Eigen::FullPivLU<Mat> lu(F);
  if (!lu.isInvertible()) throw Error("linear_plant: F must be invertible");
  const Mat F_inv = lu.inverse();
  const int n = static_cast<int>(F.rows());
  const int p = static_cast<int>(H.rows());
  auto linear_components = [n](const Mat& M) {
    std::vector<Polynomial> out;
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      Polynomial row(n);
      for (int j = 0; j < n; ++j) row += M(i, j) * Polynomial::variable(n, j);
      out.push_back(row);
    }
    return out;
  };
  PolynomialForm poly{linear_components(F), linear_components(H)};
  return PlantModel(
      std::move(name), n, p, [F](const Vec& x) -> Vec { return F * x; },
      [F_inv](const Vec& x) -> Vec { return F_inv * x; },
      [H](const Vec& x) -> Vec { return H * x; }, std::move(box_x), std::move(box_x0),
      std::move(box_x_enlarged), std::move(poly));
}

/// Measurement noise of the oscillator example, w_k = 0.2 cos(20k), with
/// bounds max/min{0.2 cos(20k), 0.5 / max(k,1)^2}. The max(k,1) guard
/// defines the bound at k = 0.
inline double oscillator_noise(int k) { return 0.2 * std::cos(20.0 * k); }

inline NoiseSpec oscillator_noise_bounds(int n_x) {
  auto envelope = [](int k) {
    const double kk = std::max(k, 1);
    return 0.5 / (kk * kk);
  };
  NoiseSpec spec = NoiseSpec::none(n_x, 1);
  spec.w_hi = [envelope](int k) {
    return Vec::Constant(1, std::max(oscillator_noise(k), envelope(k)));
  };
  spec.w_lo = [envelope](int k) {
    return Vec::Constant(1, std::min(oscillator_noise(k), envelope(k)));
  };
  return spec;
}

}  // namespace kkl
