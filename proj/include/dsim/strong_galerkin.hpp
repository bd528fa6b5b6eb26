#pragma once

#include "discretization.hpp"
#include "model.hpp"
#include "regularization.hpp"
#include "scenario.hpp"
#include "weak_stepper.hpp"

#include <Eigen/LU>

namespace dsim {

struct RegParams {
  double delta = 0.125;
  double nu = 1.0 / 4096.0;
  int rung = 3;
  Vec varpi0; // empty: zero

  static double schedule_bound(int n) { return std::ldexp(1.0, -n); }
  static RegParams schedule(int n) {
    require(n >= 1, "RegParams: schedule index must be >= 1");
    RegParams r;
    r.rung = n;
    r.delta = std::ldexp(1.0, -n);
    r.nu = std::ldexp(1.0, -4 * n);
    return r;
  }
  double scaling_ratio() const { return std::sqrt(nu) / delta; }
  bool satisfies_schedule() const { return scaling_ratio() <= schedule_bound(rung) * (1.0 + 1e-12); }
};

using NodalLaw = std::function<Triple(double)>; // (f, f', f'')

inline NodalLaw as_law(const RegularizedFunction& r) {
  return [r](double x) { return r(x); };
}

struct ChiSolve {
  Vec chi;
  int iterations = 0;
  double residual = 0.0;
  double S0 = 0.0; // (|chi|_H2 + |w(chi)|) / |omega|
};

// |v|^2 in the lumped norm
inline double lumped_sq(const Vec& m, const Vec& v) { return v.dot(m.cwiseProduct(v)); }

inline double discrete_h2_sq(const Operators& ops, const Vec& chi) {
  Vec lap = ops.S.apply(chi).cwiseQuotient(ops.m);
  return lumped_sq(ops.m, chi) + ops.S.quad(chi) + lumped_sq(ops.m, lap);
}

/// Solves K chi + m (w(chi) + chi) = m omega.
inline ChiSolve chi_from_omega(const Operators& ops, const Vec& omega, const NodalLaw& w,
                               const Vec& guess = Vec(), double tol = 1e-11, int max_it = 100) {
  const int n = static_cast<int>(omega.size());
  const Vec& m = ops.m;
  auto resid = [&](const Vec& x, Vec& wv, Vec& dw) {
    wv.resize(n);
    dw.resize(n);
    for (int i = 0; i < n; ++i) {
      Triple t = w(x[i]);
      wv[i] = t.value;
      dw[i] = t.d1;
    }
    Vec r = ops.S.apply(x) + m.cwiseProduct(wv + x - omega);
    return Vec(r.cwiseQuotient(m));
  };
  ChiSolve out;
  for (int attempt = 0; attempt < 3; ++attempt) {
    Vec x = (attempt == 0 && guess.size() == n) ? guess : Vec(0.5 * omega);
    double damp_cap = attempt == 2 ? 0.5 : 1.0;
    Vec wv, dw;
    Vec r = resid(x, wv, dw);
    double rn = r.cwiseAbs().maxCoeff();
    // roundoff floor of the strong-form residual
    double floor = 64.0 * std::numeric_limits<double>::epsilon() *
                   (ops.S.d.cwiseQuotient(m).maxCoeff() + 1.0) * (1.0 + x.cwiseAbs().maxCoeff() + omega.cwiseAbs().maxCoeff());
    tol = std::max(tol, floor);
    int it = 0;
    for (; it < max_it && rn > tol; ++it) {
      SymTridiag J = ops.S;
      J.d += m.cwiseProduct(dw + Vec::Ones(n));
      Vec d = J.solve(-m.cwiseProduct(r));
      double alpha = damp_cap;
      Vec xn, wn, dn, rnew;
      double rnn = kInf;
      for (int ls = 0; ls < 40; ++ls) {
        xn = x + alpha * d;
        rnew = resid(xn, wn, dn);
        rnn = rnew.cwiseAbs().maxCoeff();
        if (rnn < rn || rnn <= tol) break;
        alpha *= 0.5;
      }
      if (!(rnn < rn) && rnn > tol) break;
      x = xn;
      r = rnew;
      wv = wn;
      dw = dn;
      rn = rnn;
    }
    if (rn <= tol) {
      out.chi = x;
      out.iterations = it;
      out.residual = rn;
      double on = std::sqrt(lumped_sq(m, omega));
      out.S0 = on > 0.0 ? (std::sqrt(discrete_h2_sq(ops, x)) + std::sqrt(lumped_sq(m, wv))) / on : 0.0;
      return out;
    }
  }
  throw SolverError("chi_from_omega: Newton did not converge");
}

/// Solves (K + diag(m (w'(chi) + 1))) chi_t = m omega_t.
inline Vec chi_rate_from_omega_rate(const Operators& ops, const Vec& chi, const Vec& omega_t,
                                    const NodalLaw& w) {
  SymTridiag H = ops.S;
  for (int i = 0; i < chi.size(); ++i) H.d[i] += ops.m[i] * (w(chi[i]).d1 + 1.0);
  return H.solve(ops.m.cwiseProduct(omega_t));
}

struct SpectralState {
  double t = 0.0;
  Vec c, cdot;
  Vec chi, chi_dot;
  Vec omega, omega_dot;
};

/// Everything a regularized step needs, assembled once.
struct StrongSystem {
  Mesh1D mesh;
  Operators ops;
  EigenBasis basis;
  Mat Yd; // element derivatives of the modes, (N-1) x (n+1)
  MaterialLaw mat;
  PotentialSplit pot;
  RegParams reg;
  RegularizedFunction Wd, Id;
  NodalLaw w, ind;
  Forcing forcing;
  Vec Fmodal; // Y' M profile
  double tol_ell = 1e-11, tol_ode = 1e-10;
  int newton_max = 30;

  int modes() const { return basis.n + 1; }
  Vec displacement(const Vec& c) const { return basis.Y * c; }
  double concave_d1(double r) const { return pot.concave_d1(r) + Wd.value_shift; }
};

inline void validate_strong_config(const ScenarioConfig& c) {
  const auto& m = c.material;
  if (m.gamma1 != 0.0 || m.gamma2 != 0.0 || !c.forcing.boundary_zero())
    throw std::invalid_argument(
        "strong mode requires homogeneous Neumann data: gamma1 = gamma2 = 0 and g = 0");
}

inline StrongSystem make_strong_system(const ScenarioConfig& c, const RegParams& reg, int n_modes) {
  validate_strong_config(c);
  require(reg.delta > 0.0 && reg.delta < 1.0, "strong mode: delta must lie in (0,1)");
  require(reg.nu > 0.0, "strong mode: nu must be positive");
  StrongSystem s;
  s.mesh = build_mesh(c.N, c.L);
  s.ops = assemble_operators(s.mesh, c.lumped_mass);
  int n = n_modes < 0 ? c.N - 2 : n_modes;
  s.basis = neumann_eigenbasis(s.mesh, s.ops, c.material.V, n);
  s.Yd.resize(c.N - 1, n + 1);
  for (int e = 0; e < c.N - 1; ++e) s.Yd.row(e) = (s.basis.Y.row(e + 1) - s.basis.Y.row(e)) / s.mesh.h;
  s.mat = c.material;
  s.pot = c.potential;
  s.reg = reg;
  s.Wd = make_W_delta(c.potential, reg.delta);
  s.Id = make_I_delta(reg.delta);
  s.w = as_law(s.Wd);
  s.ind = as_law(s.Id);
  s.forcing = c.forcing;
  s.Fmodal = s.basis.Y.transpose() * s.ops.M.apply(c.forcing.profile);
  s.tol_ell = c.tol.ell;
  s.tol_ode = c.tol.ode;
  return s;
}

namespace detail {

struct StageEval {
  Vec R;
  Mat J;
  Vec chi_m, chi_dot_m;
};

inline StageEval stage(const StrongSystem& s, const SpectralState& x0, double tau, const Vec& Phi0,
                       const Vec& Phi1, const Vec& z, Vec& chi_guess, bool want_jac) {
  const int nm = s.modes(), N = s.mesh.N, ne = N - 1;
  const double h = s.mesh.h, C = s.mat.C, V = s.mat.V, nu = s.reg.nu;
  const Vec& m = s.ops.m;
  Vec cd = z.head(nm), od = z.tail(N);
  Vec cm = x0.c + 0.5 * tau * cd + 0.5 * Phi1;
  Vec om = x0.omega + 0.5 * tau * od;
  ChiSolve cs = chi_from_omega(s.ops, om, s.w, chi_guess, s.tol_ell);
  chi_guess = cs.chi;
  const Vec& chi = cs.chi;
  Vec w1(N), w2(N);
  for (int i = 0; i < N; ++i) {
    Triple t = s.w(chi[i]);
    w1[i] = t.d1;
    w2[i] = t.d2;
  }
  SymTridiag H = s.ops.S;
  H.d += m.cwiseProduct(w1 + Vec::Ones(N));
  Vec chid = H.solve(m.cwiseProduct(od));

  Vec eps = s.Yd * cm, epsv = s.Yd * cd;
  Vec an = map_nodal(chi, s.mat.a.f), bn = map_nodal(chi, s.mat.b.f);
  Vec a1 = map_nodal(chi, s.mat.a.d1), a2 = map_nodal(chi, s.mat.a.d2), b1 = map_nodal(chi, s.mat.b.d1);
  Vec abar = element_average(an), bbar = element_average(bn);
  Vec e = Vec::Zero(N); // q_i / m_i
  for (int k = 0; k < ne; ++k) {
    double q = 0.25 * h * C * eps[k] * eps[k];
    e[k] += q;
    e[k + 1] += q;
  }
  e = e.cwiseQuotient(m);
  Vec g1(N), g2(N);
  for (int i = 0; i < N; ++i) {
    Triple t = s.ind(chid[i]);
    g1[i] = t.value;
    g2[i] = t.d1;
  }
  StageEval out;
  out.R.resize(nm + N);
  Vec stress = h * (V * bbar.cwiseProduct(epsv) + C * abar.cwiseProduct(eps));
  out.R.head(nm) = 2.0 * (cd - x0.cdot) - Phi0 + tau * (s.Yd.transpose() * stress);
  Vec rw(N);
  for (int i = 0; i < N; ++i)
    rw[i] = om[i] + chid[i] + g1[i] + e[i] * a1[i] + s.concave_d1(chi[i]) - chi[i];
  out.R.tail(N) = 2.0 * nu * (od - x0.omega_dot) + tau * rw;
  out.chi_m = chi;
  out.chi_dot_m = chid;
  if (!want_jac) return out;

  // P = H^{-1} diag(m), Q = P - (tau/2) H^{-1} diag(m w'' chi_t) P
  Mat P(N, N);
  for (int j = 0; j < N; ++j) {
    Vec ej = Vec::Zero(N);
    ej[j] = m[j];
    P.col(j) = H.solve(ej);
  }
  Vec dq = m.cwiseProduct(w2).cwiseProduct(chid);
  Mat Q = P;
  for (int j = 0; j < N; ++j) Q.col(j) -= 0.5 * tau * H.solve(dq.cwiseProduct(P.col(j)));

  Mat& J = out.J;
  J.setZero(nm + N, nm + N);
  // d Rc / d cdot
  Mat Ydb = s.Yd;
  for (int k = 0; k < ne; ++k) Ydb.row(k) *= h * (V * bbar[k] + 0.5 * tau * C * abar[k]);
  J.topLeftCorner(nm, nm) = 2.0 * Mat::Identity(nm, nm) + tau * (s.Yd.transpose() * Ydb);
  // d Rc / d omega_t through chi
  Mat G = Mat::Zero(ne, N); // d stress_e / d chi_j
  for (int k = 0; k < ne; ++k) {
    double sv = h * V * epsv[k], sa = h * C * eps[k];
    G(k, k) += 0.5 * (sv * b1[k] + sa * a1[k]);
    G(k, k + 1) += 0.5 * (sv * b1[k + 1] + sa * a1[k + 1]);
  }
  J.topRightCorner(nm, N) = (0.5 * tau * tau) * (s.Yd.transpose() * G) * P;
  // d Rw / d cdot through the strain load
  Mat E = Mat::Zero(N, nm);
  for (int k = 0; k < ne; ++k) {
    Eigen::RowVectorXd row = (0.5 * h * C * eps[k]) * s.Yd.row(k);
    E.row(k) += row;
    E.row(k + 1) += row;
  }
  for (int i = 0; i < N; ++i) E.row(i) *= a1[i] / m[i];
  J.bottomLeftCorner(N, nm) = (0.5 * tau * tau) * E;
  // d Rw / d omega_t
  Mat Jww = Q;
  for (int i = 0; i < N; ++i) Jww.row(i) *= 1.0 + g2[i];
  Vec dchi_coef = e.cwiseProduct(a2) - Vec::Constant(N, s.pot.ell + 1.0);
  Mat T = P;
  for (int i = 0; i < N; ++i) T.row(i) *= 0.5 * tau * dchi_coef[i];
  Jww += T;
  Jww.diagonal().array() += 0.5 * tau;
  J.bottomRightCorner(N, N) = 2.0 * nu * Mat::Identity(N, N) + tau * Jww;
  return out;
}

} // namespace detail

struct StepInfo {
  int newton_iterations = 0;
  double residual = 0.0;
  int substeps = 1;
};

inline SpectralState finish_state(const StrongSystem& s, const SpectralState& x0, double tau,
                                  const Vec& Phi1, const Vec& z, const Vec& chi_guess) {
  const int nm = s.modes(), N = s.mesh.N;
  SpectralState x1;
  x1.t = x0.t + tau;
  Vec cd = z.head(nm), od = z.tail(N);
  x1.c = x0.c + tau * cd + Phi1;
  x1.cdot = 2.0 * cd - x0.cdot;
  x1.omega = x0.omega + tau * od;
  x1.omega_dot = 2.0 * od - x0.omega_dot;
  x1.chi = chi_from_omega(s.ops, x1.omega, s.w, 2.0 * chi_guess - x0.chi, s.tol_ell).chi;
  x1.chi_dot = chi_rate_from_omega_rate(s.ops, x1.chi, x1.omega_dot, s.w);
  return x1;
}

/// One implicit-midpoint step; halves tau on stage failure.
inline SpectralState step_regularized(const StrongSystem& s, const SpectralState& x0, double tau,
                                      StepInfo* info = nullptr, int depth = 0) {
  const int nm = s.modes(), N = s.mesh.N;
  double t0 = x0.t, t1 = x0.t + tau, tm = 0.5 * (t0 + t1);
  Vec Phi0 = Vec::Zero(nm), Phi1 = Vec::Zero(nm);
  if (!s.forcing.body_zero()) {
    Phi0 = s.Fmodal * s.forcing.theta.integral(t0, t1);
    Phi1 = s.Fmodal * s.forcing.theta.moment(t0, t1, tm);
  }
  Vec z(nm + N);
  z.head(nm) = x0.cdot;
  z.tail(N) = x0.omega_dot;
  Vec chi_guess = x0.chi;
  double scale = 1.0 + x0.cdot.cwiseAbs().maxCoeff() + x0.omega.cwiseAbs().maxCoeff();
  bool ok = false;
  int it = 0;
  double rn = kInf;
  try {
    for (; it < s.newton_max; ++it) {
      auto ev = detail::stage(s, x0, tau, Phi0, Phi1, z, chi_guess, true);
      rn = ev.R.cwiseAbs().maxCoeff();
      if (!std::isfinite(rn)) break;
      if (rn <= s.tol_ode * scale) {
        ok = true;
        break;
      }
      Vec dz = ev.J.partialPivLu().solve(-ev.R);
      if (!dz.allFinite()) break;
      z += dz;
      if (dz.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + z.cwiseAbs().maxCoeff())) {
        auto ev2 = detail::stage(s, x0, tau, Phi0, Phi1, z, chi_guess, false);
        rn = ev2.R.cwiseAbs().maxCoeff();
        ok = rn <= 1e3 * s.tol_ode * scale;
        break;
      }
    }
  } catch (const SolverError&) {
    ok = false;
  }
  if (ok) {
    if (info) {
      info->newton_iterations += it;
      info->residual = std::max(info->residual, rn);
    }
    return finish_state(s, x0, tau, Phi1, z, chi_guess);
  }
  if (depth >= 6) throw SolverError("regularized step: stage Newton did not converge");
  if (info) info->substeps += 1;
  SpectralState mid = step_regularized(s, x0, 0.5 * tau, info, depth + 1);
  return step_regularized(s, mid, 0.5 * tau, info, depth + 1);
}

struct BlowupMonitor {
  std::vector<double> t, ut_H2, chi_H2, omega_L2, ut_H3_int, psi, mean_residual, S0, omega_t_sq;
  double psi_max = 1e6;
  bool horizon_hit = false;
  double horizon_time = 0.0;
  double beta = 0.0, exploratory_horizon = 0.0;
  double nu_omega_t_sup = 0.0;
  double elliptic_residual = 0.0; // worst coherence residual over recorded states
};

struct SpectralTrajectory {
  std::shared_ptr<const StrongSystem> sys;
  double tau = 0.0;
  std::vector<SpectralState> states;
  std::vector<int> steps;
  std::vector<StepInfo> infos;
  bool aborted = false;
  int failed_step = -1;
  std::string error;

  SimState nodal(std::size_t j) const {
    const SpectralState& x = states[j];
    SimState s;
    s.t = x.t;
    s.u = sys->displacement(x.c);
    s.v = sys->displacement(x.cdot);
    s.chi = x.chi;
    s.chi_prev = x.chi;
    return s;
  }
};

inline SpectralState initial_spectral_state(const StrongSystem& s, const ScenarioConfig& c) {
  SpectralState x;
  x.t = 0.0;
  const Mat& Y = s.basis.Y;
  x.c = Y.transpose() * s.ops.M.apply(c.u0);
  x.cdot = Y.transpose() * s.ops.M.apply(c.v0);
  x.chi = c.chi0;
  const Vec& m = s.ops.m;
  const int N = s.mesh.N;
  x.omega = s.ops.S.apply(x.chi).cwiseQuotient(m) + map_nodal(x.chi, [&](double r) { return s.w(r).value; }) + x.chi;
  if (c.strong.varpi0 == "values") {
    x.omega_dot = c.varpi0_values;
  } else if (c.strong.varpi0 == "consistent") {
    // omega_t on the slow manifold: chi_t + I'(chi_t) = -(omega + e a'(chi) + concave' - chi)
    Vec u = s.displacement(x.c);
    Vec q = elastic_weights(s.mesh, u, s.mat.C).cwiseQuotient(m);
    Vec chid(N);
    for (int i = 0; i < N; ++i) {
      double rhs = -(x.omega[i] + q[i] * s.mat.a.d1(x.chi[i]) + s.concave_d1(x.chi[i]) - x.chi[i]);
      auto g = [&](double v) { return v + s.ind(v).value - rhs; };
      auto dg = [&](double v) { return 1.0 + s.ind(v).d1; };
      double v = std::min(rhs, 0.0);
      for (int it = 0; it < 100; ++it) {
        double dv = g(v) / dg(v);
        v -= dv;
        if (std::abs(dv) < 1e-15 * (1.0 + std::abs(v))) break;
      }
      chid[i] = v;
    }
    SymTridiag H = s.ops.S;
    for (int i = 0; i < N; ++i) H.d[i] += m[i] * (s.w(x.chi[i]).d1 + 1.0);
    x.omega_dot = H.apply(chid).cwiseQuotient(m);
  } else {
    x.omega_dot = Vec::Zero(N);
  }
  x.chi_dot = chi_rate_from_omega_rate(s.ops, x.chi, x.omega_dot, s.w);
  return x;
}

inline RegParams reg_params_for(const ScenarioConfig& c) {
  RegParams r = RegParams::schedule(c.strong.rung);
  if (c.strong.delta > 0.0) r.delta = c.strong.delta;
  if (c.strong.nu > 0.0) r.nu = c.strong.nu;
  return r;
}

inline double mean_identity_residual(const StrongSystem& s, const ScenarioConfig& c,
                                     const SpectralState& x) {
  Vec one = Vec::Ones(s.mesh.N);
  Vec Mone = s.ops.M.apply(one);
  double iu = Mone.dot(s.displacement(x.c));
  double iu0 = Mone.dot(c.u0), iv0 = Mone.dot(c.v0);
  double iforce = c.forcing.body_zero() ? 0.0 : Mone.dot(c.forcing.profile) * c.forcing.theta.moment(0.0, x.t, x.t);
  return std::abs(iu - iu0 - x.t * iv0 - iforce);
}

inline std::pair<SpectralTrajectory, BlowupMonitor> run_strong(const ScenarioConfig& c,
                                                               const RegParams& reg, int n_modes) {
  auto sys = std::make_shared<StrongSystem>(make_strong_system(c, reg, n_modes));
  const StrongSystem& s = *sys;
  SpectralTrajectory tr;
  tr.sys = sys;
  int steps = c.strong.steps > 0 ? c.strong.steps : c.K;
  tr.tau = c.T / steps;
  BlowupMonitor mon;
  mon.psi_max = c.strong.psi_max;
  double rho = std::max(c.material.growth_p, c.material.growth_q);
  mon.beta = std::max(4.0 * rho + 12.0, 8.0 * c.material.growth_p / 2.0);

  const Vec& lam = s.basis.lambda;
  Vec mu = lam / s.mat.V;
  Vec w2 = (Vec::Ones(mu.size()) + mu + mu.cwiseProduct(mu));
  Vec w3 = w2 + mu.cwiseProduct(mu).cwiseProduct(mu);
  double h3_int = 0.0, h3_prev = 0.0;

  auto record = [&](const SpectralState& x, int step) {
    double ut2 = x.cdot.dot(w2.cwiseProduct(x.cdot));
    double ut3 = x.cdot.dot(w3.cwiseProduct(x.cdot));
    if (!mon.t.empty()) h3_int += 0.5 * (x.t - mon.t.back()) * (h3_prev + ut3);
    h3_prev = ut3;
    double ch2 = discrete_h2_sq(s.ops, x.chi);
    double om2 = lumped_sq(s.ops.m, x.omega);
    double ot2 = lumped_sq(s.ops.m, x.omega_dot);
    double psi = ut2 + h3_int + om2 + ch2 + 1.0;
    mon.t.push_back(x.t);
    mon.ut_H2.push_back(std::sqrt(ut2));
    mon.chi_H2.push_back(std::sqrt(ch2));
    mon.omega_L2.push_back(std::sqrt(om2));
    mon.ut_H3_int.push_back(h3_int);
    mon.psi.push_back(psi);
    mon.omega_t_sq.push_back(ot2);
    mon.nu_omega_t_sup = std::max(mon.nu_omega_t_sup, reg.nu * ot2);
    mon.mean_residual.push_back(mean_identity_residual(s, c, x));
    Vec coh = (s.ops.S.apply(x.chi) + s.ops.m.cwiseProduct(map_nodal(x.chi, [&](double r) { return s.w(r).value; }) + x.chi - x.omega)).cwiseQuotient(s.ops.m);
    mon.elliptic_residual = std::max(mon.elliptic_residual, coh.cwiseAbs().maxCoeff());
    double on = std::sqrt(om2);
    mon.S0.push_back(on > 0.0 ? std::sqrt(ch2) / on : 0.0);
    tr.states.push_back(x);
    tr.steps.push_back(step);
    if (psi > mon.psi_max && !mon.horizon_hit) {
      mon.horizon_hit = true;
      mon.horizon_time = x.t;
    }
  };

  SpectralState x = initial_spectral_state(s, c);
  record(x, 0);
  mon.exploratory_horizon = std::pow(mon.psi.front(), 1.0 - mon.beta) / (2.0 * (mon.beta - 1.0));
  const int every = std::max(1, c.strong.record_every);
  for (int k = 1; k <= steps && !mon.horizon_hit; ++k) {
    StepInfo info;
    try {
      SpectralState xn = step_regularized(s, x, tr.tau, &info);
      xn.t = k * tr.tau;
      x = std::move(xn);
    } catch (const std::exception& e) {
      tr.aborted = true;
      tr.failed_step = k;
      tr.error = e.what();
      break;
    }
    tr.infos.push_back(info);
    if (k % every == 0 || k == steps) record(x, k);
  }
  if (!mon.horizon_hit) mon.horizon_time = tr.states.back().t;
  return {std::move(tr), std::move(mon)};
}

} // namespace dsim
