#pragma once

#include "core.hpp"

#include <functional>
#include <vector>

namespace dsim {

/// Maximal monotone graph carried by its resolvent J_lambda = prox(lambda, .).
struct MonotoneGraph {
  std::string name;
  std::function<double(double, double)> prox;
  std::function<double(double)> min_section; // optional; NaN outside the domain
  std::function<double(double)> potential;   // optional; +inf outside the domain
  std::vector<double> kinks;                 // where J_lambda fails to be smooth
  bool piecewise_affine = false;             // J_lambda affine between kinks
  double lo = -kInf, hi = kInf;              // closure of the domain

  bool has_potential() const { return static_cast<bool>(potential); }
};

// Root of y - x + lambda*d1(y) = 0 on (lo, hi); d1 nondecreasing.
inline double monotone_prox_solve(const std::function<double(double)>& d1,
                                  const std::function<double(double)>& d2, double lambda,
                                  double x, double lo, double hi) {
  auto phi = [&](double y) { return y - x + lambda * d1(y); };
  double a, b;
  if (std::isfinite(lo) && std::isfinite(hi)) {
    a = lo;
    b = hi;
    if (phi(a) >= 0.0) return a;
    if (phi(b) <= 0.0) return b;
  } else {
    double f0 = phi(x);
    if (f0 == 0.0) return x;
    double step = 1.0 + std::abs(x);
    if (f0 > 0.0) {
      b = x;
      a = x - step;
      while (phi(a) > 0.0) { step *= 2.0; a = x - step; if (step > 1e300) throw SolverError("prox bracket"); }
    } else {
      a = x;
      b = x + step;
      while (phi(b) < 0.0) { step *= 2.0; b = x + step; if (step > 1e300) throw SolverError("prox bracket"); }
    }
  }
  double y = 0.5 * (a + b);
  for (int it = 0; it < 400; ++it) {
    double f = phi(y);
    if (f == 0.0) return y;
    if (f > 0.0) b = y; else a = y;
    double dy = f / (1.0 + lambda * d2(y));
    double yn = y - dy;
    if (!(yn > a && yn < b)) yn = 0.5 * (a + b);
    if (std::abs(yn - y) <= 1e-16 * (1.0 + std::abs(y)) || b - a <= 1e-16 * (1.0 + std::abs(y)))
      return yn;
    y = yn;
  }
  throw SolverError("prox iteration did not converge");
}

/// d I_{(-inf,0]}
inline MonotoneGraph indicator_nonpositive() {
  MonotoneGraph g;
  g.name = "indicator_nonpositive";
  g.prox = [](double, double x) { return std::min(x, 0.0); };
  g.min_section = [](double x) { return x <= 0.0 ? 0.0 : std::nan(""); };
  g.potential = [](double x) { return x <= 0.0 ? 0.0 : kInf; };
  g.kinks = {0.0};
  g.piecewise_affine = true;
  g.hi = 0.0;
  return g;
}

/// d I_{[a,b]}
inline MonotoneGraph indicator_interval(double a, double b) {
  MonotoneGraph g;
  g.name = "indicator_interval";
  g.prox = [a, b](double, double x) { return clamp(x, a, b); };
  g.min_section = [a, b](double x) { return (x >= a && x <= b) ? 0.0 : std::nan(""); };
  g.potential = [a, b](double x) { return (x >= a && x <= b) ? 0.0 : kInf; };
  g.kinks = {a, b};
  g.piecewise_affine = true;
  g.lo = a;
  g.hi = b;
  return g;
}

/// d(r^2/2)
inline MonotoneGraph quadratic_graph() {
  MonotoneGraph g;
  g.name = "quadratic";
  g.prox = [](double lambda, double x) { return x / (1.0 + lambda); };
  g.min_section = [](double x) { return x; };
  g.potential = [](double x) { return 0.5 * x * x; };
  g.piecewise_affine = true;
  return g;
}

// Gradient of a smooth convex function restricted to (lo, hi).
inline MonotoneGraph smooth_convex_graph(std::string name, std::function<double(double)> value,
                                         std::function<double(double)> d1,
                                         std::function<double(double)> d2, double lo, double hi) {
  MonotoneGraph g;
  g.name = std::move(name);
  g.prox = [d1, d2, lo, hi](double lambda, double x) {
    return monotone_prox_solve(d1, d2, lambda, x, lo, hi);
  };
  g.min_section = [d1, lo, hi](double x) { return (x > lo && x < hi) ? d1(x) : std::nan(""); };
  g.potential = [value, lo, hi](double x) { return (x >= lo && x <= hi) ? value(x) : kInf; };
  g.lo = lo;
  g.hi = hi;
  return g;
}

} // namespace dsim
