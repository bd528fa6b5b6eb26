#pragma once

#include "graph.hpp"
#include "model.hpp"
#include "quadrature.hpp"

#include <algorithm>
#include <memory>

namespace dsim {

/// Bump kernel c*exp(-1/(1-x^2)) on (-1,1), unit mass.
struct Mollifier {
  double c = 1.0;
  double C_hat = 0.0; // L1 norm of the derivative
  double m2 = 0.0;    // second moment

  double shape(double x) const {
    double s = 1.0 - x * x;
    return s > 0.0 ? std::exp(-1.0 / s) : 0.0;
  }
  double rho(double x) const { return c * shape(x); }
  double drho(double x) const {
    double s = 1.0 - x * x;
    if (s <= 0.0) return 0.0;
    double g1 = -2.0 * x / (s * s);
    return rho(x) * g1;
  }
  double d2rho(double x) const {
    double s = 1.0 - x * x;
    if (s <= 0.0) return 0.0;
    double g1 = -2.0 * x / (s * s);
    double g2 = -2.0 / (s * s) - 8.0 * x * x / (s * s * s);
    return rho(x) * (g1 * g1 + g2);
  }
};

inline const Mollifier& standard_mollifier() {
  static const Mollifier m = [] {
    Mollifier k;
    k.c = 1.0;
    double mass = integrate([&](double x) { return k.shape(x); }, -1.0, 1.0, 1e-15).value;
    k.c = 1.0 / mass;
    k.C_hat = integrate([&](double x) { return std::abs(k.drho(x)); }, -1.0, 0.0, 1e-14).value +
              integrate([&](double x) { return std::abs(k.drho(x)); }, 0.0, 1.0, 1e-14).value;
    k.m2 = integrate([&](double x) { return x * x * k.rho(x); }, -1.0, 1.0, 1e-15).value;
    return k;
  }();
  return m;
}

struct Triple {
  double value = 0.0, d1 = 0.0, d2 = 0.0;
};

/// beta_delta = (Yosida of graph) * rho_delta, with optional argument and value shifts.
struct RegularizedFunction {
  MonotoneGraph graph;
  double delta = 0.1;        // reported parameter (used by the bound checks)
  double eval_delta = 0.1;   // parameter actually used in evaluation
  double arg_shift = 0.0;    // f(x) = raw(x - arg_shift) - value_shift
  double value_shift = 0.0;
  double anchor = 0.0;       // potential normalized to match the Moreau envelope here
  const Mollifier* moll = &standard_mollifier();
  double quad_tol = 1e-13;

  double resolvent(double x) const { return graph.prox(eval_delta, x); }
  double yosida(double x) const { return (x - resolvent(x)) / eval_delta; }
  double moreau(double x) const {
    double j = resolvent(x);
    return sqr(x - j) / (2.0 * eval_delta) + graph.potential(j);
  }

  // Kinks of the Yosida map strictly inside (x - d^2, x + d^2), as kernel coordinates.
  std::vector<double> kink_nodes(double x) const {
    double w = eval_delta * eval_delta;
    std::vector<double> z;
    for (double k : graph.kinks) {
      double s = (x - k) / w;
      if (s > -1.0 && s < 1.0) z.push_back(s);
    }
    std::sort(z.begin(), z.end());
    return z;
  }

  Triple raw(double x) const {
    const double w = eval_delta * eval_delta;
    auto nodes = kink_nodes(x);
    Triple t;
    if (nodes.empty() && graph.piecewise_affine) {
      double eta = 0.5 * w;
      t.value = yosida(x);
      t.d1 = (yosida(x + eta) - yosida(x - eta)) / (2.0 * eta);
      t.d2 = 0.0;
      return t;
    }
    std::vector<double> br{-1.0};
    br.insert(br.end(), nodes.begin(), nodes.end());
    br.push_back(1.0);
    const Mollifier& m = *moll;
    auto f = [&](double z) {
      double by = yosida(x - w * z);
      return Eigen::Vector3d(m.rho(z) * by, m.drho(z) * by, m.d2rho(z) * by);
    };
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i + 1 < br.size(); ++i) acc += adaptive(f, br[i], br[i + 1], 0);
    t.value = acc[0];
    t.d1 = acc[1] / w;
    t.d2 = acc[2] / (w * w);
    return t;
  }

  Triple operator()(double x) const {
    Triple t = raw(x - arg_shift);
    t.value -= value_shift;
    return t;
  }

  // Antiderivative of raw(), equal to the Moreau envelope at the anchor.
  double raw_potential(double x) const {
    auto conv = [&](double y) {
      const double w = eval_delta * eval_delta;
      auto nodes = kink_nodes(y);
      if (nodes.empty() && graph.piecewise_affine) {
        // Moreau envelope is quadratic on the support
        double eta = 0.5 * w;
        double slope = (yosida(y + eta) - yosida(y - eta)) / (2.0 * eta);
        return moreau(y) + 0.5 * slope * w * w * moll->m2;
      }
      std::vector<double> br{-1.0};
      br.insert(br.end(), nodes.begin(), nodes.end());
      br.push_back(1.0);
      double s = 0.0;
      for (std::size_t i = 0; i + 1 < br.size(); ++i)
        s += integrate([&](double z) { return moll->rho(z) * moreau(y - w * z); }, br[i],
                       br[i + 1], quad_tol)
                 .value;
      return s;
    };
    return conv(x) - conv(anchor) + moreau(anchor);
  }

  double potential(double x) const { return raw_potential(x - arg_shift) - value_shift * x; }

private:
  template <class F>
  Eigen::Vector3d adaptive(const F& f, double a, double b, int depth) const {
    double m = 0.5 * (a + b);
    Eigen::Vector3d whole = gauss_apply(f, a, b, gauss64());
    Eigen::Vector3d l = gauss_apply(f, a, m, gauss64());
    Eigen::Vector3d r = gauss_apply(f, m, b, gauss64());
    Eigen::Vector3d both = l + r;
    double err = 0.0;
    for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(both[i] - whole[i]) / (1.0 + std::abs(both[i])));
    if (err <= quad_tol) return both;
    if (depth >= 24) throw SolverError("convolution quadrature did not converge");
    return adaptive(f, a, m, depth + 1) + adaptive(f, m, b, depth + 1);
  }
};

inline double resolvent(const MonotoneGraph& g, double lambda, double x) {
  require(lambda > 0.0, "resolvent: lambda must be positive");
  require(static_cast<bool>(g.prox), "resolvent: graph has no prox rule");
  double y = g.prox(lambda, x);
  if (!std::isfinite(y)) throw SolverError("resolvent: prox returned a non-finite value");
  return y;
}

inline double yosida_eval(const MonotoneGraph& g, double delta, double x) {
  require(delta > 0.0 && delta < 1.0, "yosida_eval: delta must lie in (0,1)");
  return (x - resolvent(g, delta, x)) / delta;
}

inline RegularizedFunction make_regularized(const MonotoneGraph& g, double delta) {
  require(delta > 0.0 && delta < 1.0, "regularization: delta must lie in (0,1)");
  require(static_cast<bool>(g.prox), "regularization: graph has no prox rule");
  RegularizedFunction r;
  r.graph = g;
  r.delta = r.eval_delta = delta;
  return r;
}

inline Triple smooth_yosida_eval(const RegularizedFunction& reg, double x) {
  require(std::isfinite(x), "smooth_yosida_eval: x must be finite");
  return reg(x);
}

/// Regularized convex part, translated so that its derivative vanishes at 0.
inline RegularizedFunction make_W_delta(const PotentialSplit& split, double delta) {
  RegularizedFunction r = make_regularized(split.convex_part, delta);
  r.value_shift = r.raw(0.0).value;
  return r;
}

/// Regularized d I_{(-inf,0]}, shifted by delta^2 so that it vanishes on (-inf,0].
inline RegularizedFunction make_I_delta(double delta) {
  RegularizedFunction r = make_regularized(indicator_nonpositive(), delta);
  r.arg_shift = delta * delta;
  return r;
}

struct PropertyReport {
  double delta = 0.0;
  double tol = 1e-7;
  // Worst margin of each bound over the grid; positive means the bound holds.
  double margin_value = kInf, margin_d1 = kInf, margin_d2 = kInf;
  double margin_pot_upper = kInf, margin_pot_lower = kInf;
  double worst_x_value = 0, worst_x_d1 = 0, worst_x_d2 = 0, worst_x_upper = 0, worst_x_lower = 0;
  bool potential_checked = false;

  bool value_ok() const { return margin_value > 0.0; }
  bool d1_ok() const { return margin_d1 > 0.0; }
  bool d2_ok() const { return margin_d2 > 0.0; }
  bool potential_ok() const { return margin_pot_upper > 0.0 && margin_pot_lower > 0.0; }
  bool all_ok() const { return value_ok() && d1_ok() && d2_ok() && potential_ok(); }
};

inline PropertyReport regularization_property_check(const RegularizedFunction& reg,
                                                     const std::vector<double>& grid,
                                                     double tol = 1e-7) {
  require(!grid.empty(), "regularization_property_check: empty grid");
  PropertyReport rep;
  rep.delta = reg.delta;
  rep.tol = tol;
  const double d = reg.delta;
  const double chat = reg.moll->C_hat;
  auto upd = [](double& m, double& wx, double val, double x) {
    if (val < m) m = val, wx = x;
  };
  rep.potential_checked = reg.graph.has_potential();
  for (double x : grid) {
    Triple t = reg.raw(x);
    double by = reg.yosida(x);
    upd(rep.margin_value, rep.worst_x_value, d + tol - std::abs(t.value - by), x);
    upd(rep.margin_d1, rep.worst_x_d1, 1.0 / d + tol - std::abs(t.d1), x);
    upd(rep.margin_d2, rep.worst_x_d2, chat / (d * d * d) + tol - std::abs(t.d2), x);
    if (rep.potential_checked) {
      double p = reg.raw_potential(x);
      double bh = reg.graph.potential(x);
      if (std::isfinite(bh))
        upd(rep.margin_pot_upper, rep.worst_x_upper, bh + d * std::abs(x) + tol - p, x);
      upd(rep.margin_pot_lower, rep.worst_x_lower, p - (reg.moreau(x) - d * std::abs(x) - tol), x);
    }
  }
  return rep;
}

} // namespace dsim
