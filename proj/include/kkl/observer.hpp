#pragma once

// Interval observer in the target coordinates of a KKL transform.
//
// Framed bounds ẑ± are propagated with the constant nonnegative matrix
// Λ = R_{k+1} A R_k^{-1}; z± are recovered through the split of S_k = R_k^{-1}
// and x± through the numerical inverse T* with the margin c/γ^{m̄-1}.

#include "kkl/coord_change.hpp"
#include "kkl/interval_core.hpp"
#include "kkl/kkl_transform.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace kkl {

/// How the two inverse images T*(z+) and T*(z-) are combined. MinMax is the
/// tightest; the others trade tightness for fewer inversions or symmetry.
enum class RecoveryVariant { MinMax, PlusOnly, MinusOnly, Swapped };

inline RecoveryVariant parse_recovery_variant(const std::string& s) {
  if (s == "minmax" || s == "min_max") return RecoveryVariant::MinMax;
  if (s == "plus" || s == "plus_only") return RecoveryVariant::PlusOnly;
  if (s == "minus" || s == "minus_only") return RecoveryVariant::MinusOnly;
  if (s == "swapped") return RecoveryVariant::Swapped;
  throw Error("unknown recovery variant '" + s + "'");
}

inline const char* to_string(RecoveryVariant v) {
  switch (v) {
    case RecoveryVariant::MinMax: return "minmax";
    case RecoveryVariant::PlusOnly: return "plus_only";
    case RecoveryVariant::MinusOnly: return "minus_only";
    case RecoveryVariant::Swapped: return "swapped";
  }
  return "?";
}

struct ObserverConfig {
  std::shared_ptr<const KklTransform> transform;
  std::shared_ptr<const CoordChangeSeq> coord;
  SystemConstants consts;
  double gamma = 1.0;
  InverseConfig inverse_cfg = [] {
    InverseConfig c;
    c.max_starts = 0;  // z± are rarely in the image of T
    return c;
  }();
  double margin_c_over_gamma = 0.0;  ///< c / γ^{m̄-1}
  RecoveryVariant recovery_variant = RecoveryVariant::MinMax;

  void validate() const {
    if (!transform || !coord) throw Error("ObserverConfig: transform and coord are required");
    if (coord->dim() != transform->n_z()) throw DimensionError("ObserverConfig: frame size differs from n_z");
    if (!(margin_c_over_gamma > 0.0)) throw Error("ObserverConfig: margin c/γ^(m̄-1) must be positive");
    if (!(consts.c_L > 0.0)) throw Error("ObserverConfig: c_L must be positive");
    if (std::abs(gamma - transform->target().gamma()) > 1e-15 ||
        std::abs(gamma - coord->gamma()) > 1e-15) {
      throw Error("ObserverConfig: gamma differs between transform, frame and config");
    }
  }
};

/// Observer state at time k. `zhat_width` carries ẑ+ - ẑ- through its own
/// recursion, width_{k+1} = Λ width_k + |R_{k+1} B| (w+ - w-) + 2 |R_{k+1}| δ_k,
/// which is exact for the noise-free case.
struct ObserverState {
  long k = 0;
  Vec zhat_hi;
  Vec zhat_lo;
  Vec zhat_width;
  Vec z_hi;
  Vec z_lo;
  Vec x_hi;
  Vec x_lo;
};

struct XBounds {
  Vec lo;
  Vec hi;
  InverseResult from_hi;  ///< T*(z+)
  InverseResult from_lo;  ///< T*(z-)
};

/// z0± from T(x0±) widened by c_L max_j(x0+_j - x0-_j), then framed by R_0.
inline ObserverState init_observer(const ObserverConfig& cfg, const Vec& x0_lo, const Vec& x0_hi) {
  cfg.validate();
  if (x0_lo.size() != cfg.transform->n_x() || x0_hi.size() != x0_lo.size()) {
    throw DimensionError("init_observer: wrong initial box size");
  }
  if (!all_le(x0_lo, x0_hi)) throw Error("init_observer: x0_lo must not exceed x0_hi");
  const Vec t_hi = cfg.transform->eval(x0_hi);
  const Vec t_lo = cfg.transform->eval(x0_lo);
  const double spread = cfg.consts.c_L * (x0_hi - x0_lo).maxCoeff();

  ObserverState s;
  s.z_hi = t_hi.cwiseMin(t_lo).array() + spread;
  s.z_lo = t_hi.cwiseMax(t_lo).array() - spread;
  const Interval framed = interval_image(cfg.coord->R(0), s.z_lo, s.z_hi);
  s.zhat_hi = framed.hi;
  s.zhat_lo = framed.lo;
  s.zhat_width = s.zhat_hi - s.zhat_lo;
  s.x_lo = x0_lo;
  s.x_hi = x0_hi;
  return s;
}

/// One step with measurement y_k, noise bounds [w_lo, w_hi] and disturbance
/// bounds [d_lo, d_hi]; returns the state at k + 1 with z± filled in.
inline ObserverState step(const ObserverState& state, const ObserverConfig& cfg, const Vec& y,
                          const Vec& w_lo, const Vec& w_hi, const Vec& d_lo, const Vec& d_hi) {
  const auto& target = cfg.transform->target();
  if (y.size() != target.n_y() || w_lo.size() != y.size() || w_hi.size() != y.size()) {
    throw DimensionError("observer step: output/noise size mismatch");
  }
  if (d_lo.size() != cfg.transform->n_x() || d_hi.size() != d_lo.size()) {
    throw DimensionError("observer step: disturbance size mismatch");
  }
  if (!all_le(w_lo, w_hi) || !all_le(d_lo, d_hi)) {
    throw Error("observer step: bound order violated (lo > hi)");
  }
  const long next = state.k + 1;
  const Mat& lambda = cfg.coord->lambda();
  const Mat r_next = cfg.coord->R(next);
  const Mat rb = r_next * target.B();
  const Mat rb_pos = split_pos(rb);
  const Mat rb_neg = split_neg(rb);
  const Vec drive = rb * y;

  ObserverState out;
  out.k = next;
  out.zhat_hi = lambda * state.zhat_hi + drive + rb_neg * w_hi - rb_pos * w_lo;
  out.zhat_lo = lambda * state.zhat_lo + drive + rb_neg * w_lo - rb_pos * w_hi;
  out.zhat_width = lambda * state.zhat_width + (rb_pos + rb_neg) * (w_hi - w_lo);

  // T(f(x) + d) - T(f(x)) ∈ [-δ, δ] E with δ = c_L max |d±|, carried into the
  // frame through R_{k+1}.
  const double delta =
      cfg.consts.c_L * std::max(d_lo.cwiseAbs().maxCoeff(), d_hi.cwiseAbs().maxCoeff());
  if (delta > 0.0) {
    const Vec e = Vec::Constant(target.n_z(), delta);
    const Interval spread = interval_image(r_next, -e, e);
    out.zhat_hi += spread.hi;
    out.zhat_lo += spread.lo;
    out.zhat_width += spread.hi - spread.lo;
  }

  const Interval z = interval_image(cfg.coord->S(next), out.zhat_lo, out.zhat_hi);
  out.z_lo = z.lo;
  out.z_hi = z.hi;
  return out;
}

/// x± from T*(z±). The margin c/γ^{m̄-1} multiplies max_j(z+_j - z-_j) plus
/// the inversion residual of the corresponding side, so a local minimizer
/// still yields a valid bound. At k = 0 the initial box is returned.
inline XBounds recover_x_bounds(const ObserverState& state, const ObserverConfig& cfg,
                                const std::optional<Vec>& warm_hi = std::nullopt,
                                const std::optional<Vec>& warm_lo = std::nullopt) {
  XBounds out;
  if (state.k == 0) {
    out.lo = state.x_lo;
    out.hi = state.x_hi;
    out.from_hi = {state.x_hi, 0.0, 0};
    out.from_lo = {state.x_lo, 0.0, 0};
    return out;
  }
  const double wz = (state.z_hi - state.z_lo).maxCoeff();
  const double k = cfg.margin_c_over_gamma;
  const auto& variant = cfg.recovery_variant;

  InverseConfig inv = cfg.inverse_cfg;
  const bool need_hi = variant != RecoveryVariant::MinusOnly;
  const bool need_lo = variant != RecoveryVariant::PlusOnly;
  if (need_hi) {
    inv.warm_start = warm_hi;
    out.from_hi = invert_T(*cfg.transform, state.z_hi, inv);
  }
  if (need_lo) {
    inv.warm_start = warm_lo;
    out.from_lo = invert_T(*cfg.transform, state.z_lo, inv);
  }
  const double m_hi = k * (wz + out.from_hi.residual);
  const double m_lo = k * (wz + out.from_lo.residual);
  const Vec a = out.from_hi.x;
  const Vec b = out.from_lo.x;
  switch (variant) {
    case RecoveryVariant::MinMax:
      out.hi = (a.array() + m_hi).min(b.array() + m_lo);
      out.lo = (a.array() - m_hi).max(b.array() - m_lo);
      break;
    case RecoveryVariant::Swapped:
      out.hi = (a.array() + m_hi).max(b.array() + m_lo);
      out.lo = (a.array() - m_hi).min(b.array() - m_lo);
      break;
    case RecoveryVariant::PlusOnly:
      out.hi = a.array() + m_hi;
      out.lo = a.array() - m_hi;
      out.from_lo = out.from_hi;
      break;
    case RecoveryVariant::MinusOnly:
      out.hi = b.array() + m_lo;
      out.lo = b.array() - m_lo;
      out.from_hi = out.from_lo;
      break;
  }
  return out;
}

/// A decomposition function T_d*(u, v) of T*: T_d*(z, z) = T*(z), increasing
/// in u, decreasing in v. Only valid when T* is mixed monotone.
using Decomposition = std::function<Vec(const Vec&, const Vec&)>;

/// (lo, hi) = (T_d*(z-, z+), T_d*(z+, z-)). The decomposition is spot-checked
/// against `inverse` at z+, z- and their midpoint.
inline Interval recover_x_mixed_monotone(const Vec& z_lo, const Vec& z_hi,
                                         const Decomposition& decomposition,
                                         const std::function<Vec(const Vec&)>& inverse,
                                         double check_tol = 1e-6) {
  if (!decomposition || !inverse) throw Error("recover_x_mixed_monotone: missing function");
  for (const Vec& z : {z_lo, z_hi, Vec(0.5 * (z_lo + z_hi))}) {
    const Vec expected = inverse(z);
    const double scale = std::max(1.0, inf_norm(expected));
    if (inf_norm(decomposition(z, z) - expected) > check_tol * scale) {
      throw Error("recover_x_mixed_monotone: T_d*(z, z) differs from T*(z)");
    }
  }
  return {decomposition(z_lo, z_hi), decomposition(z_hi, z_lo)};
}

inline Interval recover_x_mixed_monotone(const ObserverState& state, const ObserverConfig& cfg,
                                         const Decomposition& decomposition,
                                         double check_tol = 1e-6) {
  auto inverse = [&cfg](const Vec& z) { return invert_T(*cfg.transform, z, cfg.inverse_cfg).x; };
  return recover_x_mixed_monotone(state.z_lo, state.z_hi, decomposition, inverse, check_tol);
}

/// Stateful wrapper: steps, recovers x± and warm-starts each inversion from
/// the previous solution of the same side.
class IntervalObserver {
 public:
  IntervalObserver(ObserverConfig cfg, const Vec& x0_lo, const Vec& x0_hi)
      : cfg_(std::move(cfg)), state_(init_observer(cfg_, x0_lo, x0_hi)) {
    last_ = recover_x_bounds(state_, cfg_);
  }

  const ObserverConfig& config() const { return cfg_; }
  const ObserverState& state() const { return state_; }
  const XBounds& bounds() const { return last_; }

  const ObserverState& update(const Vec& y, const Vec& w_lo, const Vec& w_hi, const Vec& d_lo,
                              const Vec& d_hi) {
    state_ = step(state_, cfg_, y, w_lo, w_hi, d_lo, d_hi);
    std::optional<Vec> warm_hi;
    std::optional<Vec> warm_lo;
    if (state_.k > 1) {
      warm_hi = last_.from_hi.x;
      warm_lo = last_.from_lo.x;
    }
    last_ = recover_x_bounds(state_, cfg_, warm_hi, warm_lo);
    state_.x_lo = last_.lo;
    state_.x_hi = last_.hi;
    return state_;
  }

 private:
  ObserverConfig cfg_;
  ObserverState state_;
  XBounds last_;
};

}  // namespace kkl
