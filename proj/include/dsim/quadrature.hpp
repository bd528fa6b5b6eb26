#pragma once

#include "core.hpp"

#include <functional>
#include <vector>

namespace dsim {

struct GaussRule {
  std::vector<double> x, w;
};

// Nodes and weights on [-1,1] by Newton iteration on P_n.
inline GaussRule gauss_legendre(int n) {
  GaussRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    r.x[i] = -z;
    r.x[n - 1 - i] = z;
    r.w[i] = r.w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return r;
}

inline const GaussRule& gauss64() {
  static const GaussRule rule = gauss_legendre(64);
  return rule;
}

template <class F>
auto gauss_apply(const F& f, double a, double b, const GaussRule& rule) {
  double c = 0.5 * (a + b), hw = 0.5 * (b - a);
  decltype(f(c)) s = f(c) * 0.0;
  for (std::size_t i = 0; i < rule.x.size(); ++i) s += rule.w[i] * f(c + hw * rule.x[i]);
  return s * hw;
}

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  bool converged = true;
};

namespace detail {
inline void adaptive_rec(const std::function<double(double)>& f, double a, double b,
                         double whole, double tol, int depth, QuadResult& out) {
  double m = 0.5 * (a + b);
  double left = gauss_apply(f, a, m, gauss64());
  double right = gauss_apply(f, m, b, gauss64());
  double err = std::abs(left + right - whole);
  if (err <= tol || depth <= 0) {
    if (err > tol) out.converged = false;
    out.value += left + right;
    out.error += err;
    return;
  }
  adaptive_rec(f, a, m, left, 0.5 * tol, depth - 1, out);
  adaptive_rec(f, m, b, right, 0.5 * tol, depth - 1, out);
}
} // namespace detail

// 64-point Gauss-Legendre with bisection until halves agree.
inline QuadResult integrate(const std::function<double(double)>& f, double a, double b,
                            double tol = 1e-13, int max_depth = 30) {
  QuadResult out;
  if (a == b) return out;
  double whole = gauss_apply(f, a, b, gauss64());
  detail::adaptive_rec(f, a, b, whole, tol, max_depth, out);
  return out;
}

} // namespace dsim
