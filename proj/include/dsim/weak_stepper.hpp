#pragma once

#include "discretization.hpp"
#include "model.hpp"
#include "scenario.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <vector>

namespace dsim {

struct SimState {
  double t = 0.0;
  Vec u, v, chi;
  Vec chi_prev;
};

/// Nodal damage objective
///   P(x) = sum m_i [ (x_i - p_i)^2/(2 tau) + Wc(x_i) + drift_i x_i ] + x'Kx/2 + sum q_i a(x_i)
/// over x <= upper.
struct DamageSubproblem {
  double tau = 0.0;
  SymTridiag K;
  Vec m;
  const PotentialSplit* potential = nullptr;
  Vec drift; // concave derivative at the previous damage
  Vec load;  // elastic weights q_i of the previous displacement
  const ScalarLaw* a = nullptr;
  Vec upper;
  Vec chi_prev;

  int size() const { return static_cast<int>(m.size()); }

  double objective(const Vec& x) const {
    double s = 0.5 * K.quad(x);
    for (int i = 0; i < size(); ++i) {
      double w = potential->convex_value(x[i]);
      if (!std::isfinite(w)) return kInf;
      s += m[i] * (sqr(x[i] - chi_prev[i]) / (2.0 * tau) + w + drift[i] * x[i]) + load[i] * (*a)(x[i]);
    }
    return s;
  }
  // Everything except the convex potential.
  double smooth_part(const Vec& x) const {
    double s = 0.5 * K.quad(x);
    for (int i = 0; i < size(); ++i)
      s += m[i] * (sqr(x[i] - chi_prev[i]) / (2.0 * tau) + drift[i] * x[i]) + load[i] * (*a)(x[i]);
    return s;
  }
  Vec smooth_gradient(const Vec& x) const {
    Vec g = K.apply(x);
    for (int i = 0; i < size(); ++i)
      g[i] += m[i] * ((x[i] - chi_prev[i]) / tau + drift[i]) + load[i] * a->d1(x[i]);
    return g;
  }
  Vec gradient(const Vec& x) const {
    Vec g = smooth_gradient(x);
    for (int i = 0; i < size(); ++i) g[i] += m[i] * potential->convex_d1(x[i]);
    return g;
  }
  SymTridiag hessian(const Vec& x) const {
    SymTridiag H = K;
    for (int i = 0; i < size(); ++i)
      H.d[i] += m[i] / tau + m[i] * potential->convex_d2(x[i]) + load[i] * a->d2(x[i]);
    return H;
  }
  double lower(int) const { return potential->solver_lo(); }
  double upper_bound(int i) const { return std::min(upper[i], potential->solver_hi()); }
};

inline DamageSubproblem make_damage_subproblem(const Mesh1D& mesh, const Operators& ops,
                                               const MaterialLaw& mat, const PotentialSplit& pot,
                                               double tau, const Vec& chi_prev, const Vec& u_prev) {
  DamageSubproblem p;
  p.tau = tau;
  p.K = ops.S;
  p.m = ops.m;
  p.potential = &pot;
  p.drift = map_nodal(chi_prev, [&](double r) { return pot.concave_d1(r); });
  p.load = elastic_weights(mesh, u_prev, mat.C);
  p.a = &mat.a;
  p.upper = chi_prev;
  p.chi_prev = chi_prev;
  return p;
}

struct StepReport {
  int step = 0;
  int fista_iterations = 0;
  int newton_iterations = 0;
  double objective_before = 0.0, objective_after = 0.0;
  double kkt_residual = 0.0;
  int active_upper = 0, active_lower = 0;
  std::vector<std::uint8_t> active; // 0 free, 1 at the upper bound, 2 at the lower bound
  double linear_residual = 0.0;
  double wall_time = 0.0;

  double objective_decrease() const { return objective_before - objective_after; }
};

// Smallest c with Wc(r) >= -c|r| - C, from the slopes at the far ends of [-10, 10].
inline double affine_minorant_slope(const PotentialSplit& pot) {
  double c = 0.0;
  if (!std::isfinite(pot.hi)) c = std::max(c, (pot.convex_value(5.0) - pot.convex_value(10.0)) / 5.0);
  if (!std::isfinite(pot.lo)) c = std::max(c, (pot.convex_value(-5.0) - pot.convex_value(-10.0)) / 5.0);
  return c;
}

inline double tau_max(const PotentialSplit& pot) {
  double c = affine_minorant_slope(pot);
  return c > 0.0 ? 1.0 / (2.0 * c * c) : kInf;
}

namespace detail {

// Projected-gradient residual in gradient units.
inline Vec kkt_residual(const DamageSubproblem& p, const Vec& x, const Vec& g, const Vec& D) {
  Vec r(x.size());
  for (int i = 0; i < p.size(); ++i) {
    double y = clamp(x[i] - g[i] / D[i], p.lower(i), p.upper_bound(i));
    r[i] = std::abs(x[i] - y) * D[i];
  }
  return r;
}

} // namespace detail

/// Minimize the damage objective under x <= chi_prev.
inline std::pair<Vec, StepReport> damage_step(const DamageSubproblem& p, double tol,
                                              int fista_max = 50, int newton_max = 200) {
  auto t0 = std::chrono::steady_clock::now();
  require(p.tau > 0.0 && p.tau < tau_max(*p.potential), "damage_step: tau above the coercivity bound");
  const int n = p.size();
  StepReport rep;
  Vec lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    lo[i] = p.lower(i);
    hi[i] = p.upper_bound(i);
    if (lo[i] > hi[i]) throw SolverError("damage subproblem infeasible");
  }
  Vec x = p.chi_prev.cwiseMax(lo).cwiseMin(hi);
  rep.objective_before = p.objective(p.chi_prev);

  // accelerated proximal gradient warm start
  {
    double Lc = 0.0;
    for (int i = 0; i < n; ++i) {
      double row = std::abs(p.K.d[i]) + (i > 0 ? std::abs(p.K.e[i - 1]) : 0.0) +
                   (i + 1 < n ? std::abs(p.K.e[i]) : 0.0);
      Lc = std::max(Lc, row + p.m[i] / p.tau + std::abs(p.load[i] * p.a->d2(x[i])));
    }
    const MonotoneGraph& g = p.potential->convex_part;
    Vec y = x, xold = x;
    double t = 1.0;
    for (int it = 0; it < fista_max; ++it) {
      Vec gy = p.smooth_gradient(y);
      double fy = p.smooth_part(y);
      Vec xn(n);
      for (;;) {
        double alpha = 1.0 / Lc;
        for (int i = 0; i < n; ++i)
          xn[i] = clamp(g.prox(alpha * p.m[i], y[i] - alpha * gy[i]), lo[i], hi[i]);
        Vec d = xn - y;
        if (p.smooth_part(xn) <= fy + gy.dot(d) + 0.5 * Lc * d.squaredNorm() + 1e-14 * (1.0 + std::abs(fy)))
          break;
        Lc *= 2.0;
      }
      rep.fista_iterations = it + 1;
      double step = (xn - y).cwiseAbs().maxCoeff() * Lc;
      double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      if (p.objective(xn) > p.objective(xold)) {
        y = xold; // restart
        t = 1.0;
        continue;
      }
      y = xn + ((t - 1.0) / tn) * (xn - xold);
      y = y.cwiseMax(lo).cwiseMin(hi);
      xold = xn;
      t = tn;
      if (step <= tol) break;
    }
    x = xold;
  }

  // projected Newton on the active-set reduced system
  Vec r;
  for (int it = 0;; ++it) {
    Vec gr = p.gradient(x);
    SymTridiag H = p.hessian(x);
    r = detail::kkt_residual(p, x, gr, H.d);
    double res = r.maxCoeff();
    if (res <= tol) break;
    if (it >= newton_max) throw SolverError("damage step: inner solver did not converge");
    rep.newton_iterations = it + 1;
    double eps = std::min(1e-8, res / H.d.maxCoeff());
    std::vector<int> free_idx;
    std::vector<char> fixed(n, 0);
    for (int i = 0; i < n; ++i) {
      if ((x[i] - lo[i] <= eps && gr[i] > 0.0) || (hi[i] - x[i] <= eps && gr[i] < 0.0)) fixed[i] = 1;
      else free_idx.push_back(i);
    }
    Vec d = Vec::Zero(n);
    if (!free_idx.empty()) {
      const int nf = static_cast<int>(free_idx.size());
      SymTridiag Hf(nf);
      Vec rhs(nf);
      for (int j = 0; j < nf; ++j) {
        int i = free_idx[j];
        Hf.d[j] = H.d[i];
        rhs[j] = -gr[i];
        if (j + 1 < nf && free_idx[j + 1] == i + 1) Hf.e[j] = H.e[i];
      }
      Vec df = Hf.solve(rhs);
      for (int j = 0; j < nf; ++j) d[free_idx[j]] = df[j];
    }
    double f0 = p.objective(x);
    double alpha = 1.0;
    Vec xn;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      xn = (x + alpha * d).cwiseMax(lo).cwiseMin(hi);
      double f1 = p.objective(xn);
      if (f1 <= f0 + 1e-4 * gr.dot(xn - x) || std::abs(f1 - f0) <= 1e-15 * (1.0 + std::abs(f0))) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // projected gradient step with diagonal scaling
      for (int i = 0; i < n; ++i) xn[i] = clamp(x[i] - gr[i] / H.d[i], lo[i], hi[i]);
    }
    if ((xn - x).cwiseAbs().maxCoeff() == 0.0) {
      r = detail::kkt_residual(p, xn, p.gradient(xn), p.hessian(xn).d);
      if (r.maxCoeff() > tol) throw SolverError("damage step: stagnation above tolerance");
      break;
    }
    x = xn;
  }
  rep.kkt_residual = r.size() ? r.maxCoeff() : 0.0;
  rep.objective_after = p.objective(x);
  rep.active.assign(n, 0);
  Vec gfin = p.gradient(x);
  for (int i = 0; i < n; ++i) {
    if (x[i] >= hi[i] && gfin[i] <= 0.0 && hi[i] == p.upper[i]) rep.active[i] = 1, ++rep.active_upper;
    else if (x[i] <= lo[i] && std::isfinite(lo[i])) rep.active[i] = 2, ++rep.active_lower;
  }
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {x, rep};
}

/// Load vector and boundary data of one step.
struct StepLoads {
  Vec F;
  double g0 = 0.0, gL = 0.0; // already divided by gamma0
};

inline StepLoads step_loads(const Operators& ops, const Forcing& f, const MaterialLaw& mat, double t0,
                            double t1) {
  double tau = t1 - t0;
  StepLoads s;
  double th = f.body_zero() ? 0.0 : f.theta.integral(t0, t1) / tau;
  s.F = th == 0.0 ? Vec::Zero(f.profile.size()) : Vec(ops.M.apply(f.profile) * th);
  s.g0 = f.g0.integral(t0, t1) / tau / mat.gamma0;
  s.gL = f.gL.integral(t0, t1) / tau / mat.gamma0;
  return s;
}

/// Momentum system matrix for the new damage field.
inline SymTridiag momentum_matrix(const Mesh1D& mesh, const Operators& ops, const MaterialLaw& mat,
                                  const Vec& chi, double tau) {
  Vec bn = map_nodal(chi, mat.b.f), an = map_nodal(chi, mat.a.f);
  SymTridiag A = ops.M;
  A.d /= tau * tau;
  A.e /= tau * tau;
  A.axpy(mat.V / tau, weighted_stiffness(mesh, element_average(bn)));
  A.axpy(mat.C, weighted_stiffness(mesh, element_average(an)));
  double bnd = mat.robin_damping() / tau + mat.robin_stiffness();
  A.d[0] += bnd;
  A.d[mesh.N - 1] += bnd;
  return A;
}

/// Returns u^k and the relative residual of the linear solve.
inline std::pair<Vec, double> momentum_step(const Mesh1D& mesh, const Operators& ops,
                                            const MaterialLaw& mat, double tau, const Vec& u_prev,
                                            const Vec& v_prev, const Vec& chi, const StepLoads& loads) {
  for (int i = 0; i < mesh.N; ++i)
    if (!(mat.b(chi[i]) >= mat.b_floor * (1.0 - 1e-12)))
      throw SolverError("momentum step: viscosity below its floor");
  Vec bn = map_nodal(chi, mat.b.f);
  SymTridiag A = momentum_matrix(mesh, ops, mat, chi, tau);
  Vec rhs = ops.M.apply(u_prev) / (tau * tau) + ops.M.apply(v_prev) / tau;
  rhs += (mat.V / tau) * weighted_stiffness(mesh, element_average(bn)).apply(u_prev);
  rhs[0] += mat.robin_damping() / tau * u_prev[0] + loads.g0;
  rhs[mesh.N - 1] += mat.robin_damping() / tau * u_prev[mesh.N - 1] + loads.gL;
  rhs += loads.F;
  Vec u = A.solve(rhs);
  double nr = rhs.norm();
  double res = (A.apply(u) - rhs).norm() / (nr > 0.0 ? nr : 1.0);
  return {u, res};
}

struct StepContext {
  int k;
  const SimState& prev;
  const SimState& cur;
  const StepLoads& loads;
  const StepReport& report;
  const DamageSubproblem& sub;
};

struct Trajectory {
  std::string mode = "weak";
  Mesh1D mesh;
  Operators ops;
  double tau = 0.0;
  int K = 0;
  std::vector<SimState> snapshots;
  std::vector<int> snapshot_steps;
  std::vector<StepReport> reports;
  bool aborted = false;
  int failed_step = -1;
  std::string error;
};

using StepObserver = std::function<void(const StepContext&)>;

inline SimState initial_state(const ScenarioConfig& c) {
  SimState s;
  s.t = 0.0;
  s.u = c.u0;
  s.v = c.v0;
  s.chi = c.chi0;
  s.chi_prev = c.chi0;
  return s;
}

inline Trajectory run_weak(const ScenarioConfig& c, const StepObserver& obs = {}) {
  Trajectory tr;
  tr.mesh = build_mesh(c.N, c.L);
  tr.ops = assemble_operators(tr.mesh, c.lumped_mass);
  tr.K = c.K;
  tr.tau = c.tau();
  const double tau = tr.tau;
  SimState cur = initial_state(c);
  tr.snapshots.push_back(cur);
  tr.snapshot_steps.push_back(0);
  for (int k = 1; k <= c.K; ++k) {
    SimState prev = cur;
    try {
      DamageSubproblem sub = make_damage_subproblem(tr.mesh, tr.ops, c.material, c.potential, tau,
                                                    prev.chi, prev.u);
      auto [chi, rep] = damage_step(sub, c.tol.inner, c.tol.fista_max, c.tol.newton_max);
      StepLoads loads = step_loads(tr.ops, c.forcing, c.material, (k - 1) * tau, k * tau);
      auto [u, res] = momentum_step(tr.mesh, tr.ops, c.material, tau, prev.u, prev.v, chi, loads);
      if (res > c.tol.lin) throw SolverError("momentum solve residual above tolerance", k);
      rep.step = k;
      rep.linear_residual = res;
      cur.t = k * tau;
      cur.chi_prev = prev.chi;
      cur.chi = chi;
      cur.v = (u - prev.u) / tau;
      cur.u = std::move(u);
      if (obs) obs(StepContext{k, prev, cur, loads, rep, sub});
      rep.active.clear();
      rep.active.shrink_to_fit();
      tr.reports.push_back(std::move(rep));
    } catch (const std::exception& e) {
      tr.aborted = true;
      tr.failed_step = k;
      tr.error = e.what();
      break;
    }
    if (k % c.output_stride == 0 || k == c.K) {
      tr.snapshots.push_back(cur);
      tr.snapshot_steps.push_back(k);
    }
  }
  return tr;
}

struct TruncationReport {
  bool applicable = true;
  std::string warning;
  std::vector<int> flagged_steps;
  double worst_excess = 0.0; // max of P(x+) - P(x)

  bool passed() const { return flagged_steps.empty(); }
};

/// Checks x = max(x,0) and P(max(x,0)) <= P(x) at every stored step.
inline TruncationReport truncation_consistency_check(const Trajectory& tr, const ScenarioConfig& c,
                                                     double tol = 1e-12) {
  TruncationReport rep;
  if (!hypothesis_one(c.material)) {
    rep.applicable = false;
    rep.warning = "damage law violates the truncation hypotheses; check skipped";
    return rep;
  }
  for (std::size_t j = 1; j < tr.snapshots.size(); ++j) {
    const SimState& s = tr.snapshots[j];
    if (tr.snapshot_steps[j] - tr.snapshot_steps[j - 1] != 1) continue;
    const SimState& p = tr.snapshots[j - 1];
    DamageSubproblem sub =
        make_damage_subproblem(tr.mesh, tr.ops, c.material, c.potential, tr.tau, p.chi, p.u);
    Vec plus = s.chi.cwiseMax(0.0);
    double P = sub.objective(s.chi), Pp = sub.objective(plus);
    bool bad = (plus - s.chi).cwiseAbs().maxCoeff() > 0.0 || !(Pp <= P + tol * (1.0 + std::abs(P)));
    if (std::isfinite(P) && std::isfinite(Pp)) rep.worst_excess = std::max(rep.worst_excess, Pp - P);
    if (bad) rep.flagged_steps.push_back(tr.snapshot_steps[j]);
  }
  return rep;
}

} // namespace dsim
