#pragma once

#include "core.hpp"
#include "graph.hpp"

#include <map>
#include <optional>
#include <vector>

namespace dsim {

/// Scalar constitutive function with two derivatives.
struct ScalarLaw {
  std::string name;
  double scale = 1.0;
  double offset = 0.0;
  std::function<double(double)> f, d1, d2;

  double operator()(double r) const { return f(r); }
};

inline ScalarLaw make_law(const std::string& name, double scale = 1.0, double offset = 0.0) {
  ScalarLaw l;
  l.name = name;
  l.scale = scale;
  l.offset = offset;
  const double s = scale, c = offset;
  if (name == "zero") {
    l.f = [](double) { return 0.0; };
    l.d1 = l.d2 = l.f;
  } else if (name == "constant") {
    l.f = [s](double) { return s; };
    l.d1 = l.d2 = [](double) { return 0.0; };
  } else if (name == "identity") {
    l.f = [s](double r) { return s * r; };
    l.d1 = [s](double) { return s; };
    l.d2 = [](double) { return 0.0; };
  } else if (name == "quadratic_plus") {
    l.f = [s](double r) { return r > 0.0 ? s * r * r : 0.0; };
    l.d1 = [s](double r) { return r > 0.0 ? 2.0 * s * r : 0.0; };
    l.d2 = [s](double r) { return r >= 0.0 ? 2.0 * s : 0.0; };
  } else if (name == "cubic_plus") {
    l.f = [s](double r) { return r > 0.0 ? s * r * r * r : 0.0; };
    l.d1 = [s](double r) { return r > 0.0 ? 3.0 * s * r * r : 0.0; };
    l.d2 = [s](double r) { return r > 0.0 ? 6.0 * s * r : 0.0; };
  } else if (name == "quadratic_floor") {
    // offset + scale*r^2
    l.f = [s, c](double r) { return c + s * r * r; };
    l.d1 = [s](double r) { return 2.0 * s * r; };
    l.d2 = [s](double) { return 2.0 * s; };
  } else {
    throw std::invalid_argument("unknown law preset: " + name);
  }
  return l;
}

struct MaterialLaw {
  ScalarLaw a = make_law("quadratic_plus");
  ScalarLaw b = make_law("constant");
  double b_floor = 1.0;
  double C = 1.0, V = 1.0;
  double growth_p = 1.0, growth_q = 1.0;
  double gamma0 = 1.0, gamma1 = 0.0, gamma2 = 0.0;

  // Robin data divided through by gamma0.
  double robin_damping() const { return gamma1 / gamma0; }
  double robin_stiffness() const { return gamma2 / gamma0; }
};

enum class PotentialKind { Quadratic, Logarithmic, IndicatorBox, DoubleWell };

/// W = convex part + concave part, concave part -(ell/2) r^2.
struct PotentialSplit {
  std::string name;
  PotentialKind kind = PotentialKind::Quadratic;
  MonotoneGraph convex_part;
  std::function<double(double)> convex_value; // +inf outside the domain
  std::function<double(double)> convex_d1, convex_d2, convex_d3;
  double ell = 0.0;
  double lo = -kInf, hi = kInf; // closed hull of the domain
  double eps_dom = 0.0;         // barrier offset used for open ends
  std::map<std::string, double> params;

  double concave_value(double r) const { return -0.5 * ell * r * r; }
  double concave_d1(double r) const { return -ell * r; }
  double value(double r) const { return convex_value(r) + concave_value(r); }

  bool bounded_domain() const { return std::isfinite(lo) || std::isfinite(hi); }
  // W differentiable on all of R.
  bool smooth() const { return !bounded_domain(); }
  bool in_domain(double r, double tol = 0.0) const { return r >= lo - tol && r <= hi + tol; }

  // Box used by the damage solver for the convex term.
  double solver_lo() const { return std::isfinite(lo) ? lo + eps_dom : -kInf; }
  double solver_hi() const { return std::isfinite(hi) ? hi - eps_dom : kInf; }
};

inline double param_or(const std::map<std::string, double>& p, const std::string& k, double dflt) {
  auto it = p.find(k);
  return it == p.end() ? dflt : it->second;
}

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

inline PotentialSplit make_potential(const std::string& name,
                                     const std::map<std::string, double>& params = {}) {
  PotentialSplit p;
  p.name = name;
  p.params = params;
  if (name == "quadratic") {
    p.kind = PotentialKind::Quadratic;
    p.ell = param_or(params, "ell", 0.0);
    require(p.ell >= 0.0, "quadratic potential: ell must be nonnegative");
    p.convex_part = quadratic_graph();
    p.convex_value = [](double r) { return 0.5 * r * r; };
    p.convex_d1 = [](double r) { return r; };
    p.convex_d2 = [](double) { return 1.0; };
    p.convex_d3 = [](double) { return 0.0; };
  } else if (name == "logarithmic") {
    p.kind = PotentialKind::Logarithmic;
    double c1 = param_or(params, "c1", 1.0);
    double c2 = param_or(params, "c2", 0.0);
    double c3 = param_or(params, "c3", 0.0);
    double eps = param_or(params, "eps_dom", 1e-9);
    require(c1 >= 0.0, "logarithmic potential: c1 must be nonnegative");
    require(eps > 0.0 && eps < 0.5, "logarithmic potential: eps_dom out of range");
    p.ell = 2.0 * c1;
    p.lo = 0.0;
    p.hi = 1.0;
    p.eps_dom = eps;
    p.convex_value = [c2, c3](double r) {
      if (r < 0.0 || r > 1.0) return kInf;
      return xlogx(r) + xlogx(1.0 - r) - c2 * r - c3;
    };
    p.convex_d1 = [c2, eps](double r) {
      r = clamp(r, eps, 1.0 - eps);
      return std::log(r / (1.0 - r)) - c2;
    };
    p.convex_d2 = [eps](double r) {
      r = clamp(r, eps, 1.0 - eps);
      return 1.0 / (r * (1.0 - r));
    };
    p.convex_d3 = [eps](double r) {
      r = clamp(r, eps, 1.0 - eps);
      return (2.0 * r - 1.0) / (r * r * (1.0 - r) * (1.0 - r));
    };
    MonotoneGraph g;
    g.name = "logarithmic";
    auto d1 = p.convex_d1, d2 = p.convex_d2;
    g.prox = [d1, d2, eps](double lambda, double x) {
      return monotone_prox_solve(d1, d2, lambda, x, eps, 1.0 - eps);
    };
    g.min_section = [d1](double x) { return (x > 0.0 && x < 1.0) ? d1(x) : std::nan(""); };
    g.potential = p.convex_value;
    g.lo = 0.0;
    g.hi = 1.0;
    p.convex_part = g;
  } else if (name == "indicator_box") {
    p.kind = PotentialKind::IndicatorBox;
    p.ell = param_or(params, "ell", 0.0);
    require(p.ell >= 0.0, "indicator_box potential: ell must be nonnegative");
    p.lo = 0.0;
    p.hi = 1.0;
    p.convex_part = indicator_interval(0.0, 1.0);
    p.convex_value = [](double r) { return (r >= 0.0 && r <= 1.0) ? 0.0 : kInf; };
    p.convex_d1 = p.convex_d2 = p.convex_d3 = [](double) { return 0.0; };
  } else if (name == "smooth_double_well") {
    // W = c r^2 (1-r)^2
    p.kind = PotentialKind::DoubleWell;
    double c = param_or(params, "c", 1.0);
    p.ell = param_or(params, "ell", c);
    require(c >= 0.0, "smooth_double_well: height must be nonnegative");
    require(p.ell >= c, "smooth_double_well: ell below the convexity threshold (ell >= c)");
    const double l = p.ell;
    p.convex_value = [c, l](double r) { return c * r * r * (1 - r) * (1 - r) + 0.5 * l * r * r; };
    p.convex_d1 = [c, l](double r) { return c * (2 * r - 6 * r * r + 4 * r * r * r) + l * r; };
    p.convex_d2 = [c, l](double r) { return c * (2 - 12 * r + 12 * r * r) + l; };
    p.convex_d3 = [c](double r) { return c * (-12 + 24 * r); };
    p.convex_part = smooth_convex_graph("double_well_convex", p.convex_value, p.convex_d1,
                                        p.convex_d2, -kInf, kInf);
  } else {
    throw std::invalid_argument("unknown potential preset: " + name);
  }
  return p;
}

struct HypothesisCheck {
  std::string name;
  bool passed = true;
  std::optional<double> witness; // grid point of the first failure
  double value = 0.0;            // fitted constant where relevant
  std::string detail;
};

struct ValidationReport {
  std::vector<HypothesisCheck> checks;

  bool all_passed() const {
    for (auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
  const HypothesisCheck* find(const std::string& name) const {
    for (auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return v;
}

inline std::vector<double> default_validation_grid() { return linspace(-10.0, 10.0, 2001); }

inline ValidationReport validate_material(const MaterialLaw& law,
                                          const std::vector<double>& grid,
                                          double tol = 1e-12) {
  require(!grid.empty(), "validate_material: empty grid");
  ValidationReport rep;
  auto add = [&](HypothesisCheck c) { rep.checks.push_back(std::move(c)); };

  add({"C_positive", law.C > 0.0, std::nullopt, law.C, ""});
  add({"V_positive", law.V > 0.0, std::nullopt, law.V, ""});
  add({"tensor_symmetry", true, std::nullopt, 0.0, "scalar coefficients, vacuous in 1D"});
  {
    HypothesisCheck c{"gamma_nonnegative", law.gamma0 >= 0 && law.gamma1 >= 0 && law.gamma2 >= 0,
                      std::nullopt, 0.0, ""};
    add(c);
  }
  {
    HypothesisCheck c{"b_floor", law.b_floor > 0.0, std::nullopt, law.b_floor, ""};
    for (double r : grid)
      if (!(law.b(r) >= law.b_floor - tol)) {
        c.passed = false;
        c.witness = r;
        break;
      }
    add(c);
  }
  {
    HypothesisCheck c{"a_nondecreasing", true, std::nullopt, 0.0, ""};
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (law.a(grid[i]) < law.a(grid[i - 1]) - tol) {
        c.passed = false;
        c.witness = grid[i];
        break;
      }
    add(c);
  }
  {
    HypothesisCheck c{"a_vanishes_nonpositive", true, std::nullopt, 0.0, ""};
    for (double r : grid)
      if (r <= 0.0 && std::abs(law.a(r)) > tol) {
        c.passed = false;
        c.witness = r;
        break;
      }
    add(c);
  }
  {
    HypothesisCheck c{"a_convex", true, std::nullopt, 0.0, ""};
    for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
      double d2 = law.a(grid[i + 1]) - 2.0 * law.a(grid[i]) + law.a(grid[i - 1]);
      if (d2 < -tol * (1.0 + std::abs(law.a(grid[i])))) {
        c.passed = false;
        c.witness = grid[i];
        break;
      }
    }
    add(c);
  }
  auto growth = [&](const std::string& nm, const ScalarLaw& f, double p) {
    HypothesisCheck c{nm, true, std::nullopt, 0.0, ""};
    double kappa = 0.0;
    for (double r : grid) {
      double q = std::abs(f.d2(r)) / (std::pow(std::abs(r), p) + 1.0);
      if (!std::isfinite(q)) {
        c.passed = false;
        c.witness = r;
        break;
      }
      kappa = std::max(kappa, q);
    }
    c.value = kappa;
    c.detail = "fitted kappa over grid";
    add(c);
  };
  growth("a_growth", law.a, law.growth_p);
  growth("b_growth", law.b, law.growth_q);
  return rep;
}

// Damage laws for which the truncation argument applies.
inline bool hypothesis_one(const MaterialLaw& law) {
  auto rep = validate_material(law, default_validation_grid());
  for (const char* k : {"a_nondecreasing", "a_vanishes_nonpositive", "a_convex", "b_floor"})
    if (!rep.find(k)->passed) return false;
  return true;
}

} // namespace dsim
