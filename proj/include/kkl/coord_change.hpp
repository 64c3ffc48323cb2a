#pragma once

// Time-varying change of frame R_k such that R_{k+1} A R_k^{-1} is a constant
// nonnegative Schur matrix, for A = gamma * blockdiag(canonical blocks).
//
//   positive real  λ >= 0 : R_k = 1            Λ = γλ
//   negative real  λ <  0 : R_k = (-1)^k       Λ = γ|λ|
//   rotation   ρ Rot(θ)   : R_k = Rot(-kθ)     Λ = γρ I_2
//
// R_k is evaluated in closed form from k, never by accumulating products.

#include "kkl/interval_core.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace kkl {

struct CanonicalBlock {
  enum class Kind { PositiveReal, NegativeReal, Rotation };

  Kind kind = Kind::PositiveReal;
  double value = 0.0;  ///< λ for real blocks, ρ for rotations
  double angle = 0.0;  ///< θ, rotations only

  /// Real eigenvalue λ; the sign picks the kind.
  static CanonicalBlock real(double lambda) {
    return {lambda < 0.0 ? Kind::NegativeReal : Kind::PositiveReal, lambda, 0.0};
  }
  static CanonicalBlock rotation(double rho, double theta) {
    if (!(rho > 0.0)) throw Error("CanonicalBlock: rotation modulus must be positive");
    return {Kind::Rotation, rho, theta};
  }

  int dim() const { return kind == Kind::Rotation ? 2 : 1; }
  double modulus() const { return std::abs(value); }

  /// The unscaled block of Ã.
  Mat matrix() const {
    if (kind != Kind::Rotation) return Mat::Constant(1, 1, value);
    Mat m(2, 2);
    m << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    return value * m;
  }
};

inline Mat rotation_matrix(double phi) {
  Mat m(2, 2);
  m << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  return m;
}

inline Mat block_diag(const std::vector<Mat>& parts) {
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    r += p.rows();
    c += p.cols();
  }
  Mat out = Mat::Zero(r, c);
  r = 0;
  c = 0;
  for (const auto& p : parts) {
    out.block(r, c, p.rows(), p.cols()) = p;
    r += p.rows();
    c += p.cols();
  }
  return out;
}

namespace detail {

// sup_k (|cos kθ| + |sin kθ|). Exact over one period when θ/2π is rational
// with a small denominator, otherwise the supremum over all angles, √2.
inline double rotation_norm_sup(double theta) {
  constexpr int kMaxPeriod = 720;
  const double turns = theta / (2.0 * std::numbers::pi);
  for (int q = 1; q <= kMaxPeriod; ++q) {
    const double p = turns * q;
    if (std::abs(p - std::round(p)) < 1e-9) {
      double best = 0.0;
      for (int k = 0; k < q; ++k) {
        best = std::max(best, std::abs(std::cos(k * theta)) + std::abs(std::sin(k * theta)));
      }
      return best * (1.0 + 1e-12);
    }
  }
  return std::numbers::sqrt2;
}

}  // namespace detail

class CoordChangeSeq {
 public:
  CoordChangeSeq(std::vector<CanonicalBlock> blocks, double gamma)
      : blocks_(std::move(blocks)), gamma_(gamma) {
    if (blocks_.empty()) throw Error("build_coord_change: no blocks");
    if (!(gamma_ > 0.0)) throw Error("build_coord_change: gamma must be positive");
    std::vector<Mat> lam;
    double sup_norm = 1.0;
    for (const auto& b : blocks_) {
      if (!(gamma_ * b.modulus() < 1.0)) {
        throw Error("build_coord_change: block is not Schur after gamma scaling");
      }
      lam.push_back(gamma_ * b.modulus() * Mat::Identity(b.dim(), b.dim()));
      if (b.kind == CanonicalBlock::Kind::Rotation) {
        sup_norm = std::max(sup_norm, detail::rotation_norm_sup(b.angle));
      }
    }
    lambda_ = block_diag(lam);
    // ||R_k|| and ||R_k^{-1}|| share the same per-block bound.
    sigma_ = 2.0 * sup_norm;
  }

  const std::vector<CanonicalBlock>& blocks() const { return blocks_; }
  double gamma() const { return gamma_; }
  double sigma() const { return sigma_; }
  /// Λ = R_{k+1} A R_k^{-1}, identical for every k.
  const Mat& lambda() const { return lambda_; }
  Eigen::Index dim() const { return lambda_.rows(); }

  /// A = γ blockdiag(blocks).
  Mat target_matrix() const {
    std::vector<Mat> parts;
    for (const auto& b : blocks_) parts.push_back(gamma_ * b.matrix());
    return block_diag(parts);
  }

  Mat R(long k) const { return assemble(k, -1.0); }
  Mat S(long k) const { return assemble(k, 1.0); }

 private:
  // sign = -1 gives R_k, +1 gives S_k = R_k^{-1}.
  Mat assemble(long k, double sign) const {
    if (k < 0) throw Error("CoordChangeSeq: k must be nonnegative");
    std::vector<Mat> parts;
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case CanonicalBlock::Kind::PositiveReal:
          parts.push_back(Mat::Identity(1, 1));
          break;
        case CanonicalBlock::Kind::NegativeReal:
          parts.push_back(Mat::Constant(1, 1, k % 2 == 0 ? 1.0 : -1.0));
          break;
        case CanonicalBlock::Kind::Rotation:
          parts.push_back(rotation_matrix(sign * static_cast<double>(k) * b.angle));
          break;
      }
    }
    return block_diag(parts);
  }

  std::vector<CanonicalBlock> blocks_;
  double gamma_;
  double sigma_ = 0.0;
  Mat lambda_;
};

inline CoordChangeSeq build_coord_change(std::vector<CanonicalBlock> blocks, double gamma) {
  return CoordChangeSeq(std::move(blocks), gamma);
}

}  // namespace kkl
