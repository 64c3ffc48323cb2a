#pragma once

// Sparse multivariate polynomials with real coefficients. Used to describe
// polynomial plants and to solve the Sylvester relation by coefficient
// matching.

#include "kkl/interval_core.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace kkl {

using Exponents = std::vector<int>;

class Polynomial {
 public:
  explicit Polynomial(int n_vars = 0) : n_vars_(n_vars) {}

  static Polynomial constant(int n_vars, double c) {
    Polynomial p(n_vars);
    p.add_term(Exponents(n_vars, 0), c);
    return p;
  }
  static Polynomial variable(int n_vars, int i) {
    Polynomial p(n_vars);
    Exponents e(n_vars, 0);
    e.at(i) = 1;
    p.add_term(e, 1.0);
    return p;
  }
  static Polynomial monomial(const Exponents& e, double c = 1.0) {
    Polynomial p(static_cast<int>(e.size()));
    p.add_term(e, c);
    return p;
  }

  int n_vars() const { return n_vars_; }
  const std::map<Exponents, double>& terms() const { return terms_; }

  void add_term(const Exponents& e, double c) {
    if (static_cast<int>(e.size()) != n_vars_) {
      throw DimensionError("Polynomial: exponent tuple has wrong arity");
    }
    if (c == 0.0) return;
    auto [it, inserted] = terms_.emplace(e, c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  double coeff(const Exponents& e) const {
    auto it = terms_.find(e);
    return it == terms_.end() ? 0.0 : it->second;
  }

  int degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_) {
      int s = 0;
      for (int v : e) s += v;
      d = std::max(d, s);
    }
    return d;
  }

  double eval(const Vec& x) const {
    double acc = 0.0;
    for (const auto& [e, c] : terms_) {
      double t = c;
      for (int i = 0; i < n_vars_; ++i) {
        if (e[i] != 0) t *= std::pow(x(i), e[i]);
      }
      acc += t;
    }
    return acc;
  }

  /// Gradient at x.
  Vec grad(const Vec& x) const {
    Vec g = Vec::Zero(n_vars_);
    for (const auto& [e, c] : terms_) {
      for (int j = 0; j < n_vars_; ++j) {
        if (e[j] == 0) continue;
        double t = c * e[j];
        for (int i = 0; i < n_vars_; ++i) {
          const int p = i == j ? e[i] - 1 : e[i];
          if (p != 0) t *= std::pow(x(i), p);
        }
        g(j) += t;
      }
    }
    return g;
  }

  Polynomial& operator+=(const Polynomial& o) {
    check_arity(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [e, c] : terms_) c *= s;
    return *this;
  }
  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, Polynomial b) { return a += (b *= -1.0); }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_arity(b);
    Polynomial out(a.n_vars_);
    for (const auto& [ea, ca] : a.terms_) {
      for (const auto& [eb, cb] : b.terms_) {
        Exponents e(a.n_vars_);
        for (int i = 0; i < a.n_vars_; ++i) e[i] = ea[i] + eb[i];
        out.add_term(e, ca * cb);
      }
    }
    return out;
  }

  /// p(g_1(x), ..., g_n(x)).
  Polynomial compose(const std::vector<Polynomial>& g) const {
    if (static_cast<int>(g.size()) != n_vars_) {
      throw DimensionError("Polynomial::compose: need one polynomial per variable");
    }
    const int m = g.empty() ? 0 : g.front().n_vars();
    Polynomial out(m);
    for (const auto& [e, c] : terms_) {
      Polynomial t = constant(m, c);
      for (int i = 0; i < n_vars_; ++i) {
        for (int k = 0; k < e[i]; ++k) t = t * g[i];
      }
      out += t;
    }
    return out;
  }

  /// Drops coefficients with magnitude <= tol.
  Polynomial pruned(double tol) const {
    Polynomial out(n_vars_);
    for (const auto& [e, c] : terms_) {
      if (std::abs(c) > tol) out.add_term(e, c);
    }
    return out;
  }

 private:
  void check_arity(const Polynomial& o) const {
    if (o.n_vars_ != n_vars_) throw DimensionError("Polynomial: arity mismatch");
  }

  int n_vars_;
  std::map<Exponents, double> terms_;
};

}  // namespace kkl
