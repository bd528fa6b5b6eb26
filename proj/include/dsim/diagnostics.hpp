#pragma once

#include "strong_galerkin.hpp"
#include "weak_stepper.hpp"

#include <algorithm>

namespace dsim {

struct EnergyParts {
  double kinetic = 0, elastic = 0, gradient = 0, potential = 0, boundary = 0;
  double total() const { return kinetic + elastic + gradient + potential + boundary; }
};

inline void check_domain(const PotentialSplit& pot, const Vec& chi, double tol = 1e-12) {
  for (int i = 0; i < chi.size(); ++i)
    if (!pot.in_domain(chi[i], tol))
      throw std::domain_error("damage value " + std::to_string(chi[i]) + " outside the potential domain");
}

// Nodal potential term; Wc may be replaced by a regularized antiderivative.
template <class Wfun>
double potential_term(const Vec& m, const Vec& chi, const Wfun& W) {
  double s = 0.0;
  for (int i = 0; i < chi.size(); ++i) s += m[i] * W(chi[i]);
  return s;
}

inline EnergyParts energy_parts(const Mesh1D& mesh, const Operators& ops, const MaterialLaw& mat,
                                const PotentialSplit& pot, const SimState& s) {
  check_domain(pot, s.chi);
  EnergyParts e;
  e.kinetic = 0.5 * ops.M.quad(s.v);
  Vec q = elastic_weights(mesh, s.u, mat.C);
  for (int i = 0; i < mesh.N; ++i) e.elastic += mat.a(s.chi[i]) * q[i];
  e.gradient = 0.5 * ops.S.quad(s.chi);
  e.potential = potential_term(ops.m, s.chi, [&](double r) {
    return pot.convex_value(clamp(r, pot.lo, pot.hi)) + pot.concave_value(r);
  });
  e.boundary = 0.5 * mat.robin_stiffness() * (sqr(s.u[0]) + sqr(s.u[mesh.N - 1]));
  return e;
}

inline double energy(const Mesh1D& mesh, const Operators& ops, const MaterialLaw& mat,
                     const PotentialSplit& pot, const SimState& s) {
  return energy_parts(mesh, ops, mat, pot, s).total();
}

struct DissipationValue {
  double viscous = 0, damage = 0, boundary = 0;
  bool infeasible = false; // chi_t > tol_mono somewhere
  double value() const { return viscous + damage + boundary; }
};

/// Dissipation at damage chi with rates (v, chi_t).
inline DissipationValue dissipation(const Mesh1D& mesh, const Operators& ops, const MaterialLaw& mat,
                                    const Vec& chi, const Vec& v, const Vec& chi_t,
                                    double tol_mono = 1e-10) {
  DissipationValue d;
  Vec bbar = element_average(map_nodal(chi, mat.b.f));
  Vec ev = strains(mesh, v);
  for (int e = 0; e < mesh.elements(); ++e) d.viscous += mat.V * bbar[e] * ev[e] * ev[e] * mesh.h;
  d.damage = lumped_sq(ops.m, chi_t);
  d.boundary = mat.robin_damping() * (sqr(v[0]) + sqr(v[mesh.N - 1]));
  d.infeasible = chi_t.size() > 0 && chi_t.maxCoeff() > tol_mono;
  return d;
}

struct EnergyReport {
  std::vector<double> t, E, D, D_cum, work, edi_slack;
  std::vector<double> uedi_D_cum, uedi_work, uedi_slack;
  double tol_edi = 0.0, tol_uedi = 0.0;
  bool infeasible = false;
  std::vector<int> infeasible_steps;

  double min_edi() const { return edi_slack.empty() ? 0.0 : *std::min_element(edi_slack.begin(), edi_slack.end()); }
  double min_uedi() const { return uedi_slack.empty() ? 0.0 : *std::min_element(uedi_slack.begin(), uedi_slack.end()); }
  bool edi_passed() const { return min_edi() >= -tol_edi; }
  bool uedi_passed() const { return min_uedi() >= -tol_uedi; }
  // first step with negative slack beyond tolerance, or -1
  int first_edi_violation() const {
    for (std::size_t k = 0; k < edi_slack.size(); ++k)
      if (edi_slack[k] < -tol_edi) return static_cast<int>(k);
    return -1;
  }
};

/// Streaming accumulator for the discrete and time-continuous energy inequalities.
class EdiAccumulator {
public:
  EdiAccumulator(const Mesh1D& mesh, const Operators& ops, const ScenarioConfig& c, int K)
      : mesh_(mesh), ops_(ops), c_(c) {
    rep_.tol_edi = c.tol.inner * K;
  }

  void start(const SimState& s0) {
    E0_ = energy(mesh_, ops_, c_.material, c_.potential, s0);
    push(s0.t, E0_, 0.0, 0.0, 0.0, 0.0, 0.0);
    tprev_ = s0.t;
  }

  void step(const SimState& prev, const SimState& cur, const StepLoads& loads, int k) {
    double tau = cur.t - prev.t;
    Vec chit = (cur.chi - prev.chi) / tau;
    auto Dk = dissipation(mesh_, ops_, c_.material, cur.chi, cur.v, chit, c_.tol.mono);
    if (Dk.infeasible) {
      rep_.infeasible = true;
      rep_.infeasible_steps.push_back(k);
    }
    Vec du = cur.u - prev.u;
    double w = loads.F.dot(du) + loads.g0 * du[0] + loads.gL * du[mesh_.N - 1];
    D_cum_ += tau * Dk.value();
    work_ += w;
    // trapezoid rule on the piecewise-linear interpolants
    auto Dl = dissipation(mesh_, ops_, c_.material, prev.chi, cur.v, chit, c_.tol.mono);
    uD_ += 0.5 * tau * (Dl.value() + Dk.value());
    uW_ += 0.5 * tau * (power(prev.t, cur.v) + power(cur.t, cur.v));
    double E = energy(mesh_, ops_, c_.material, c_.potential, cur);
    push(cur.t, E, Dk.value(), D_cum_, work_, uD_, uW_);
    double dt = cur.t - tprev_;
    dt_max_ = std::max(dt_max_, dt);
    tprev_ = cur.t;
  }

  void on_step(const StepContext& ctx) { step(ctx.prev, ctx.cur, ctx.loads, ctx.k); }

  EnergyReport finish() {
    double scale = std::abs(E0_) + std::abs(work_) + std::abs(uW_) + D_cum_;
    rep_.tol_uedi = rep_.tol_edi + dt_max_ * dt_max_ * scale;
    return rep_;
  }

private:
  double power(double t, const Vec& v) const {
    const Forcing& f = c_.forcing;
    double p = 0.0;
    if (!f.body_zero()) p += f.theta(t) * ops_.M.apply(f.profile).dot(v);
    p += f.g0(t) / c_.material.gamma0 * v[0] + f.gL(t) / c_.material.gamma0 * v[mesh_.N - 1];
    return p;
  }
  void push(double t, double E, double D, double Dc, double W, double uD, double uW) {
    rep_.t.push_back(t);
    rep_.E.push_back(E);
    rep_.D.push_back(D);
    rep_.D_cum.push_back(Dc);
    rep_.work.push_back(W);
    rep_.edi_slack.push_back(E0_ + W - E - Dc);
    rep_.uedi_D_cum.push_back(uD);
    rep_.uedi_work.push_back(uW);
    rep_.uedi_slack.push_back(E0_ + uW - E - uD);
  }

  const Mesh1D& mesh_;
  const Operators& ops_;
  const ScenarioConfig& c_;
  EnergyReport rep_;
  double E0_ = 0.0, D_cum_ = 0.0, work_ = 0.0, uD_ = 0.0, uW_ = 0.0, tprev_ = 0.0, dt_max_ = 0.0;
};

namespace detail {
inline void require_consecutive(const Trajectory& tr) {
  for (std::size_t j = 1; j < tr.snapshot_steps.size(); ++j)
    require(tr.snapshot_steps[j] - tr.snapshot_steps[j - 1] == 1,
            "diagnostics need every step stored (output.stride = 1) or the streaming accumulator");
}
} // namespace detail

/// Replays stored steps through the accumulator.
inline EnergyReport discrete_edi_check(const Trajectory& tr, const ScenarioConfig& c) {
  detail::require_consecutive(tr);
  EdiAccumulator acc(tr.mesh, tr.ops, c, tr.K);
  acc.start(tr.snapshots.front());
  for (std::size_t j = 1; j < tr.snapshots.size(); ++j) {
    const SimState& p = tr.snapshots[j - 1];
    const SimState& s = tr.snapshots[j];
    StepLoads loads = step_loads(tr.ops, c.forcing, c.material, p.t, s.t);
    acc.step(p, s, loads, tr.snapshot_steps[j]);
  }
  return acc.finish();
}

inline EnergyReport uedi_check(const Trajectory& tr, const ScenarioConfig& c) {
  return discrete_edi_check(tr, c);
}

using TestBank = std::vector<Vec>;

/// {-1, -hat_i for every node, -1e-3 chi}
inline TestBank standard_test_bank(const Vec& chi) {
  const int N = static_cast<int>(chi.size());
  TestBank b;
  b.push_back(-Vec::Ones(N));
  for (int i = 0; i < N; ++i) {
    Vec e = Vec::Zero(N);
    e[i] = -1.0;
    b.push_back(e);
  }
  b.push_back(-1e-3 * chi);
  return b;
}

/// Same bank scaled so that chi + phi stays in [0, chi].
inline TestBank bounded_test_bank(const Vec& chi) {
  TestBank b = standard_test_bank(chi);
  for (auto& phi : b) phi = phi.cwiseMax(-chi);
  b.push_back(-chi);
  b.push_back(Vec::Zero(chi.size()));
  return b;
}

struct ViTerms {
  Vec rate_term; // m chi_t
  Vec grad;      // K chi
  Vec load;      // a'(chi) q
  Vec concave;   // m concave'(chi_prev)
};

inline ViTerms vi_terms(const Mesh1D& mesh, const Operators& ops, const MaterialLaw& mat,
                        const PotentialSplit& pot, const SimState& prev, const SimState& cur) {
  double tau = cur.t - prev.t;
  ViTerms t;
  t.rate_term = ops.m.cwiseProduct((cur.chi - prev.chi) / tau);
  t.grad = ops.S.apply(cur.chi);
  t.load = map_nodal(cur.chi, mat.a.d1).cwiseProduct(elastic_weights(mesh, prev.u, mat.C));
  t.concave = ops.m.cwiseProduct(map_nodal(prev.chi, [&](double r) { return pot.concave_d1(r); }));
  return t;
}

/// min over the bank of the smooth one-sided inequality, at the scheme's evaluation points.
inline double one_sided_vi_residual(const Mesh1D& mesh, const Operators& ops, const MaterialLaw& mat,
                                    const PotentialSplit& pot, const SimState& prev,
                                    const SimState& cur, const TestBank& bank) {
  require(pot.smooth(), "one_sided_vi_residual: needs a potential smooth on R");
  ViTerms t = vi_terms(mesh, ops, mat, pot, prev, cur);
  Vec wc = ops.m.cwiseProduct(map_nodal(cur.chi, pot.convex_d1));
  Vec g = t.rate_term + t.grad + t.load + t.concave + wc;
  double best = kInf;
  for (const Vec& psi : bank) {
    require(psi.maxCoeff() <= 0.0, "one_sided_vi_residual: test functions must be nonpositive");
    best = std::min(best, g.dot(psi));
  }
  return bank.empty() ? 0.0 : best;
}

struct ViSeries {
  std::vector<int> steps;
  std::vector<double> residual;
  double min() const { return residual.empty() ? 0.0 : *std::min_element(residual.begin(), residual.end()); }
};

using BankFactory = std::function<TestBank(const SimState& cur)>;

inline BankFactory bounded_test_bank_factory() {
  return [](const SimState& s) { return bounded_test_bank(s.chi); };
}

/// Min over the bank of the inequality with convex-potential differences, for one step.
inline double nonsmooth_vi_step(const Mesh1D& mesh, const Operators& ops, const ScenarioConfig& c,
                                const SimState& p, const SimState& s, const TestBank& bank) {
  const auto& pot = c.potential;
  ViTerms t = vi_terms(mesh, ops, c.material, pot, p, s);
  Vec g = t.rate_term + t.grad + t.load + t.concave;
  double best = kInf;
  for (const Vec& phi : bank) {
    require(phi.maxCoeff() <= 0.0, "nonsmooth_vi_residual: test functions must be nonpositive");
    double r = g.dot(phi);
    for (int i = 0; i < mesh.N; ++i) {
      double y = s.chi[i] + phi[i];
      if (!pot.in_domain(y, 1e-14))
        throw std::invalid_argument("nonsmooth_vi_residual: chi + phi leaves the potential domain");
      r += ops.m[i] * (pot.convex_value(clamp(y, pot.lo, pot.hi)) - pot.convex_value(clamp(s.chi[i], pot.lo, pot.hi)));
    }
    best = std::min(best, r);
  }
  return best;
}

/// Per stored consecutive step pair.
inline ViSeries nonsmooth_vi_residual(const Trajectory& tr, const ScenarioConfig& c,
                                      const BankFactory& bank_of = bounded_test_bank_factory()) {
  ViSeries out;
  for (std::size_t j = 1; j < tr.snapshots.size(); ++j) {
    if (tr.snapshot_steps[j] - tr.snapshot_steps[j - 1] != 1) continue;
    const SimState& s = tr.snapshots[j];
    out.steps.push_back(tr.snapshot_steps[j]);
    out.residual.push_back(nonsmooth_vi_step(tr.mesh, tr.ops, c, tr.snapshots[j - 1], s, bank_of(s)));
  }
  return out;
}

// ---------------------------------------------------------------- strong mode

struct BalanceSeries {
  std::vector<double> t, E, D_cum, V, work, cubic, residual;
  double final_abs() const { return residual.empty() ? 0.0 : std::abs(residual.back()); }
  double max_abs() const {
    double m = 0.0;
    for (double r : residual) m = std::max(m, std::abs(r));
    return m;
  }
};

struct StrongPointValues {
  double E, D, V, work, cubic;
};

inline StrongPointValues strong_point(const StrongSystem& s, const SpectralState& x) {
  const Vec& m = s.ops.m;
  const int N = s.mesh.N;
  StrongPointValues p{};
  Vec u = s.displacement(x.c), v = s.displacement(x.cdot);
  Vec q = elastic_weights(s.mesh, u, s.mat.C);
  double e = 0.5 * x.cdot.squaredNorm() + 0.5 * s.ops.S.quad(x.chi);
  Vec w2(N), w3(N);
  for (int i = 0; i < N; ++i) {
    double r = x.chi[i];
    e += s.mat.a(r) * q[i];
    e += m[i] * (s.Wd.raw_potential(r) + s.pot.concave_value(r));
    Triple t = s.w(r);
    w2[i] = t.d1;
    w3[i] = t.d2;
  }
  p.E = e;
  Vec ind(N);
  for (int i = 0; i < N; ++i) ind[i] = s.ind(x.chi_dot[i]).value;
  Vec bbar = element_average(map_nodal(x.chi, s.mat.b.f));
  Vec ev = strains(s.mesh, v);
  double visc = 0.0;
  for (int k = 0; k < N - 1; ++k) visc += s.mat.V * bbar[k] * ev[k] * ev[k] * s.mesh.h;
  p.D = visc + lumped_sq(m, x.chi_dot) + m.dot(ind.cwiseProduct(x.chi_dot));
  p.V = 0.5 * s.reg.nu * (s.ops.S.quad(x.chi_dot) + x.chi_dot.dot(m.cwiseProduct(w2 + Vec::Ones(N)).cwiseProduct(x.chi_dot)));
  p.work = s.forcing.body_zero() ? 0.0 : s.forcing.theta(x.t) * s.Fmodal.dot(x.cdot);
  p.cubic = 0.5 * s.reg.nu * m.dot(w3.cwiseProduct(x.chi_dot.cwiseProduct(x.chi_dot).cwiseProduct(x.chi_dot)));
  return p;
}

/// E(t) + int D + V(t) + int cubic - E(0) - V(0) - int work, trapezoid in time.
inline BalanceSeries strong_energy_balance_residual(const SpectralTrajectory& tr) {
  const StrongSystem& s = *tr.sys;
  BalanceSeries b;
  double Dc = 0.0, Wc = 0.0, Cc = 0.0;
  StrongPointValues p0 = strong_point(s, tr.states.front()), prev = p0;
  for (std::size_t j = 0; j < tr.states.size(); ++j) {
    StrongPointValues p = j == 0 ? p0 : strong_point(s, tr.states[j]);
    if (j > 0) {
      double dt = tr.states[j].t - tr.states[j - 1].t;
      Dc += 0.5 * dt * (prev.D + p.D);
      Wc += 0.5 * dt * (prev.work + p.work);
      Cc += 0.5 * dt * (prev.cubic + p.cubic);
    }
    b.t.push_back(tr.states[j].t);
    b.E.push_back(p.E);
    b.D_cum.push_back(Dc);
    b.V.push_back(p.V);
    b.work.push_back(Wc);
    b.cubic.push_back(Cc);
    b.residual.push_back(p.E + Dc + p.V + Cc - p0.E - p0.V - Wc);
    prev = p;
  }
  return b;
}

// ----------------------------------------------------------- relative energy

struct RelativeEnergyParts {
  double gradient = 0, potential = 0, elastic = 0, kinetic = 0;
  double total() const { return gradient + potential + elastic + kinetic; }
};

struct RelContext {
  const Mesh1D& mesh;
  const Operators& ops;
  const MaterialLaw& mat;
  const PotentialSplit& pot;
};

inline RelativeEnergyParts relative_energy(const RelContext& c, const SimState& s, const SimState& st) {
  check_domain(c.pot, s.chi);
  check_domain(c.pot, st.chi);
  RelativeEnergyParts r;
  Vec dchi = s.chi - st.chi;
  r.gradient = 0.5 * c.ops.S.quad(dchi);
  for (int i = 0; i < c.mesh.N; ++i) {
    double x = clamp(s.chi[i], c.pot.lo, c.pot.hi), y = clamp(st.chi[i], c.pot.lo, c.pot.hi);
    double breg = c.pot.convex_value(x) - c.pot.convex_value(y) - c.pot.convex_d1(y) * (x - y);
    r.potential += c.ops.m[i] * breg;
  }
  Vec q = elastic_weights(c.mesh, s.u - st.u, c.mat.C);
  for (int i = 0; i < c.mesh.N; ++i) r.elastic += c.mat.a(s.chi[i]) * q[i];
  r.kinetic = 0.5 * c.ops.M.quad(s.v - st.v);
  return r;
}

inline double relative_dissipation(const RelContext& c, const SimState& s, const SimState& st,
                                   const Vec& chi_t, const Vec& chi_t_ref) {
  Vec bbar = element_average(map_nodal(s.chi, c.mat.b.f));
  Vec ev = strains(c.mesh, s.v - st.v);
  double w = lumped_sq(c.ops.m, chi_t - chi_t_ref);
  for (int e = 0; e < c.mesh.elements(); ++e) w += c.mat.V * bbar[e] * ev[e] * ev[e] * c.mesh.h;
  return w;
}

/// int a'(chi) chi~_t C eps(u-u~)^2
inline double coupling_term(const RelContext& c, const SimState& s, const SimState& st,
                            const Vec& chi_t_ref) {
  Vec q = elastic_weights(c.mesh, s.u - st.u, c.mat.C);
  double v = 0.0;
  for (int i = 0; i < c.mesh.N; ++i) v += c.mat.a.d1(s.chi[i]) * chi_t_ref[i] * 2.0 * q[i];
  return v;
}

inline double element_lp(const Mesh1D& mesh, const Vec& e, double p) {
  if (std::isinf(p)) return e.size() ? e.cwiseAbs().maxCoeff() : 0.0;
  double s = 0.0;
  for (int k = 0; k < e.size(); ++k) s += mesh.h * std::pow(std::abs(e[k]), p);
  return std::pow(s, 1.0 / p);
}

inline double kappa(const RelContext& c, const SimState& st, const Vec& chi_t_ref, double C_REI) {
  double s = 0.0;
  for (int i = 0; i < c.mesh.N; ++i) s += c.ops.m[i] * std::pow(std::abs(chi_t_ref[i]), 1.5);
  double chit = std::pow(s, 2.0 / 3.0);
  Vec eut = strains(c.mesh, st.v), eu = strains(c.mesh, st.u);
  double k = chit + sqr(element_lp(c.mesh, eut, 3.0)) + sqr(c.pot.ell) +
             sqr(element_lp(c.mesh, eu, kInf)) + sqr(element_lp(c.mesh, eu, 3.0)) +
             std::pow(element_lp(c.mesh, eu, 6.0), 4.0);
  return C_REI * k;
}

/// A state with its damage rate, as used by the relative-energy machinery.
struct RatedState {
  SimState s;
  Vec chi_t;
};

using RatedSeries = std::vector<RatedState>;

inline RatedSeries weak_rated_series(const Trajectory& tr) {
  RatedSeries out;
  const auto& sn = tr.snapshots;
  for (std::size_t j = 0; j < sn.size(); ++j) {
    RatedState r{sn[j], Vec()};
    if (sn.size() == 1) r.chi_t = Vec::Zero(sn[j].chi.size());
    else if (j == 0) r.chi_t = (sn[1].chi - sn[0].chi) / (sn[1].t - sn[0].t);
    else r.chi_t = (sn[j].chi - sn[j - 1].chi) / (sn[j].t - sn[j - 1].t);
    out.push_back(std::move(r));
  }
  return out;
}

inline RatedSeries strong_rated_series(const SpectralTrajectory& tr) {
  RatedSeries out;
  for (std::size_t j = 0; j < tr.states.size(); ++j) out.push_back({tr.nodal(j), tr.states[j].chi_dot});
  return out;
}

inline Vec resample(const Vec& f, const Mesh1D& from, const Mesh1D& to) {
  Vec out(to.N);
  for (int i = 0; i < to.N; ++i) {
    double s = to.x[i] / from.h;
    int e = std::min(static_cast<int>(std::floor(s)), from.N - 2);
    double th = s - e;
    out[i] = (1.0 - th) * f[e] + th * f[e + 1];
  }
  return out;
}

inline RatedState resample(const RatedState& r, const Mesh1D& from, const Mesh1D& to) {
  RatedState o;
  o.s.t = r.s.t;
  o.s.u = resample(r.s.u, from, to);
  o.s.v = resample(r.s.v, from, to);
  o.s.chi = resample(r.s.chi, from, to);
  o.s.chi_prev = resample(r.s.chi_prev, from, to);
  o.chi_t = resample(r.chi_t, from, to);
  return o;
}

struct RelativeReport {
  std::vector<double> t, R, W, coupling, K, intK, W_cum, rhs, lhs, slack;
  double C_REI = 1.0;
  bool coupling_sign_ok = true;
  double sup_R() const { return R.empty() ? 0.0 : *std::max_element(R.begin(), R.end()); }
  double min_slack() const { return slack.empty() ? 0.0 : *std::min_element(slack.begin(), slack.end()); }
  // max over t of R(t) / (R(0) exp(int K))
  double envelope_ratio() const {
    double r = 0.0;
    for (std::size_t j = 0; j < R.size(); ++j)
      if (rhs[j] > 0.0) r = std::max(r, R[j] / rhs[j]);
    return r;
  }
};

struct AlignedPair {
  Mesh1D mesh;
  Operators ops;
  RatedSeries a, b;
};

/// Matches output times and resamples both series onto the finer mesh.
inline AlignedPair align(const RatedSeries& a, const Mesh1D& ma, const RatedSeries& b, const Mesh1D& mb,
                         double tol_t = 1e-9) {
  require(std::abs(ma.L - mb.L) <= 1e-12 * ma.L, "rei_check: domains differ");
  AlignedPair p;
  p.mesh = ma.N >= mb.N ? ma : mb;
  p.ops = assemble_operators(p.mesh);
  std::size_t jb = 0;
  for (const auto& ra : a) {
    while (jb < b.size() && b[jb].s.t < ra.s.t - tol_t) ++jb;
    if (jb == b.size() || std::abs(b[jb].s.t - ra.s.t) > tol_t) continue;
    p.a.push_back(ma.N == p.mesh.N ? ra : resample(ra, ma, p.mesh));
    p.b.push_back(mb.N == p.mesh.N ? b[jb] : resample(b[jb], mb, p.mesh));
  }
  if (p.a.size() < std::min<std::size_t>(2, a.size()))
    throw std::invalid_argument("rei_check: time grids do not share output times");
  return p;
}

/// Relative-energy inequality along an aligned pair (tested a, reference b).
inline RelativeReport rei_check(const AlignedPair& p, const MaterialLaw& mat, const PotentialSplit& pot,
                                double C_REI, double tol_sign = 1e-12) {
  RelContext c{p.mesh, p.ops, mat, pot};
  RelativeReport r;
  r.C_REI = C_REI;
  const std::size_t n = p.a.size();
  for (std::size_t j = 0; j < n; ++j) {
    const auto& A = p.a[j];
    const auto& B = p.b[j];
    r.t.push_back(A.s.t);
    r.R.push_back(relative_energy(c, A.s, B.s).total());
    r.W.push_back(relative_dissipation(c, A.s, B.s, A.chi_t, B.chi_t));
    double cp = coupling_term(c, A.s, B.s, B.chi_t);
    if (cp > tol_sign) r.coupling_sign_ok = false;
    r.coupling.push_back(cp);
    r.K.push_back(kappa(c, B.s, B.chi_t, C_REI));
  }
  // I(t) = int_0^t K, J(t) = int_0^t (W - coupling) exp(-I)
  double I = 0.0, Jw = 0.0, Wc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j > 0) {
      double dt = r.t[j] - r.t[j - 1];
      double Iprev = I;
      I += 0.5 * dt * (r.K[j - 1] + r.K[j]);
      Jw += 0.5 * dt * ((r.W[j - 1] - r.coupling[j - 1]) * std::exp(-Iprev) + (r.W[j] - r.coupling[j]) * std::exp(-I));
      Wc += 0.5 * dt * (r.W[j - 1] + r.W[j]);
    }
    r.intK.push_back(I);
    r.W_cum.push_back(Wc);
    double rhs = r.R.front() * std::exp(I);
    double lhs = r.R[j] + Jw * std::exp(I);
    r.rhs.push_back(rhs);
    r.lhs.push_back(lhs);
    r.slack.push_back(rhs - lhs);
  }
  return r;
}

/// Smallest C_REI (to relative precision) for which every slack is nonnegative.
inline double calibrate_c_rei(const AlignedPair& p, const MaterialLaw& mat, const PotentialSplit& pot,
                              double rel = 1e-6) {
  auto ok = [&](double C) { return rei_check(p, mat, pot, C).min_slack() >= 0.0; };
  if (ok(0.0)) return 0.0;
  double hi = 1.0;
  while (!ok(hi)) {
    hi *= 2.0;
    if (hi > 1e12) throw SolverError("C_REI calibration: no feasible constant found");
  }
  double lo = 0.0;
  while (hi - lo > rel * hi) {
    double mid = 0.5 * (lo + hi);
    if (ok(mid)) hi = mid; else lo = mid;
  }
  return hi;
}

} // namespace dsim
