#pragma once

// Dense vector/matrix primitives shared by the observer stack: the
// nonnegative split M = M⊕ - M⊖, guaranteed interval images and the
// infinity norms used everywhere else.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace kkl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A pair of componentwise bounds lo <= hi.
struct Interval {
  Vec lo;
  Vec hi;
};

/// Entries max{0, m_ij}.
inline Mat split_pos(const Mat& m) { return m.cwiseMax(0.0); }

/// split_pos(M) - M. Every entry is either 0 or -m_ij, so
/// split_pos(M) - split_neg(M) reproduces M bit for bit.
inline Mat split_neg(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out(i, j) = m(i, j) > 0.0 ? 0.0 : -m(i, j);
    }
  }
  return out;
}

/// Vector infinity norm; zero for empty vectors.
inline double inf_norm(const Vec& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

/// Induced infinity norm (max absolute row sum).
inline double op_inf_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline bool all_le(const Vec& a, const Vec& b) {
  return a.size() == b.size() && (a.array() <= b.array()).all();
}

/// Bounds on M a for every a with a_lo <= a <= a_hi:
///   lo = M⊕ a_lo - M⊖ a_hi,  hi = M⊕ a_hi - M⊖ a_lo.
inline Interval interval_image(const Mat& m, const Vec& a_lo, const Vec& a_hi) {
  if (m.cols() != a_lo.size() || a_lo.size() != a_hi.size()) {
    throw DimensionError("interval_image: matrix has " +
                         std::to_string(m.cols()) + " columns, bounds have " +
                         std::to_string(a_lo.size()) + " and " +
                         std::to_string(a_hi.size()) + " entries");
  }
  if (!all_le(a_lo, a_hi)) {
    throw Error("interval_image: lower bound exceeds upper bound");
  }
  const Mat pos = split_pos(m);
  const Mat neg = split_neg(m);
  return {pos * a_lo - neg * a_hi, pos * a_hi - neg * a_lo};
}

/// Axis-aligned box [lo, hi].
struct Box {
  Vec lo;
  Vec hi;

  Box() = default;
  Box(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw DimensionError("Box: corner sizes differ");
    if (!all_le(lo, hi)) throw Error("Box: lo must not exceed hi");
  }

  static Box symmetric(Eigen::Index n, double half_width) {
    return {Vec::Constant(n, -half_width), Vec::Constant(n, half_width)};
  }

  Eigen::Index dim() const { return lo.size(); }
  Vec center() const { return 0.5 * (lo + hi); }
  Vec widths() const { return hi - lo; }
  bool degenerate() const { return dim() == 0 || (widths().array() <= 0.0).any(); }

  bool contains(const Vec& x, double slack = 0.0) const {
    return x.size() == dim() && (x.array() >= lo.array() - slack).all() &&
           (x.array() <= hi.array() + slack).all();
  }
  bool contains(const Box& other) const {
    return other.dim() == dim() && (other.lo.array() >= lo.array()).all() &&
           (other.hi.array() <= hi.array()).all();
  }
  Vec clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
};

}  // namespace kkl
