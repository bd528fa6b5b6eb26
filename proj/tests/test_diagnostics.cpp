#include "oracles.hpp"

#include <gtest/gtest.h>

#include <complex>

using namespace dsim;

namespace {

ScenarioConfig from_text(const std::string& s) { return build_scenario(parse_config_text(s)); }

SimState zero_state(int N) {
  SimState s;
  s.u = s.v = s.chi = s.chi_prev = Vec::Zero(N);
  return s;
}

Vec random_vec(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> U(lo, hi);
  return Vec::NullaryExpr(n, [&](Eigen::Index) { return U(rng); });
}

// P1 interpolant of nodal values on element e at local coordinate th
double interp(const Vec& f, int e, double th) { return (1.0 - th) * f[e] + th * f[e + 1]; }
double slope(const Mesh1D& m, const Vec& f, int e) { return (f[e + 1] - f[e]) / m.h; }

const char* kSmallRun = R"(
mesh.N = 21
time.T = 0.25
time.K = 50
material.V = 0.2
potential.name = "quadratic"
potential.ell = 0.5
initial.chi0 = "affine_cos:0.8:0.1:1"
initial.u0 = "cos:0.3:1"
forcing.f.profile = "sin:1:1"
forcing.f.kind = "constant"
forcing.f.amp = 0.5
)";

} // namespace

// ------------------------------------------------------------------ energy

TEST(Energy, OnlyPotential) {
  auto mesh = build_mesh(11, 1.0);
  auto ops = assemble_operators(mesh);
  SimState s = zero_state(11);
  s.chi.setConstant(0.5);
  EXPECT_NEAR(energy(mesh, ops, MaterialLaw{}, make_potential("quadratic"), s), 0.125, 1e-15);
}

TEST(Energy, OnlyKinetic) {
  for (double L : {1.0, 2.5}) {
    auto mesh = build_mesh(9, L);
    auto ops = assemble_operators(mesh);
    SimState s = zero_state(9);
    s.v.setOnes();
    EXPECT_NEAR(energy(mesh, ops, MaterialLaw{}, make_potential("quadratic"), s), 0.5 * L, 1e-14);
  }
}

TEST(Energy, RandomFiveNodesMatchSimpson) {
  std::mt19937_64 rng(5);
  auto mesh = build_mesh(5, 1.3);
  auto ops = assemble_operators(mesh);
  MaterialLaw mat;
  mat.C = 1.7;
  mat.gamma2 = 0.4;
  mat.gamma0 = 2.0;
  auto pot = make_potential("quadratic", {{"ell", 0.3}});
  for (int t = 0; t < 20; ++t) {
    SimState s = zero_state(5);
    s.u = random_vec(rng, 5, -1, 1);
    s.v = random_vec(rng, 5, -1, 1);
    s.chi = random_vec(rng, 5, 0, 1);
    Vec a = map_nodal(s.chi, mat.a.f);
    Vec W = map_nodal(s.chi, [&](double r) { return pot.value(r); });
    double ref = oracle::simpson(mesh, [&](int e, double th) {
      return 0.5 * sqr(interp(s.v, e, th)) + 0.5 * mat.C * interp(a, e, th) * sqr(slope(mesh, s.u, e)) +
             0.5 * sqr(slope(mesh, s.chi, e)) + interp(W, e, th);
    });
    ref += 0.5 * 0.4 / 2.0 * (sqr(s.u[0]) + sqr(s.u[4]));
    EXPECT_NEAR(energy(mesh, ops, mat, pot, s), ref, 1e-9);
  }
}

TEST(Energy, OutsideLogDomainThrows) {
  auto mesh = build_mesh(5, 1.0);
  auto ops = assemble_operators(mesh);
  SimState s = zero_state(5);
  s.chi.setConstant(0.5);
  s.chi[2] = 1.2;
  EXPECT_THROW(energy(mesh, ops, MaterialLaw{}, make_potential("logarithmic"), s), std::domain_error);
}

// ------------------------------------------------------------ dissipation

TEST(Dissipation, Examples) {
  auto mesh = build_mesh(11, 1.0);
  auto ops = assemble_operators(mesh);
  MaterialLaw mat;
  Vec z = Vec::Zero(11);
  auto d0 = dissipation(mesh, ops, mat, Vec::Constant(11, 0.7), z, z);
  EXPECT_EQ(d0.value(), 0.0);
  EXPECT_FALSE(d0.infeasible);

  Vec up = z;
  up[4] = 0.1;
  EXPECT_TRUE(dissipation(mesh, ops, mat, Vec::Constant(11, 0.7), z, up).infeasible);

  mat.b = make_law("constant", 2.0);
  mat.V = 1.0;
  auto d = dissipation(mesh, ops, mat, Vec::Constant(11, 0.7), mesh.x, z);
  EXPECT_NEAR(d.value(), 2.0, 1e-13);
  EXPECT_FALSE(d.infeasible);
}

// -------------------------------------------------------------------- EDI

TEST(Edi, ComputedRunPasses) {
  auto c = from_text(kSmallRun);
  auto tr = run_weak(c);
  ASSERT_FALSE(tr.aborted);
  auto rep = discrete_edi_check(tr, c);
  EXPECT_TRUE(rep.edi_passed()) << rep.min_edi();
  EXPECT_TRUE(rep.uedi_passed()) << rep.min_uedi();
  EXPECT_FALSE(rep.infeasible);
  EXPECT_EQ(rep.edi_slack.size(), tr.snapshots.size());
  for (std::size_t j = 1; j < rep.D_cum.size(); ++j) EXPECT_GE(rep.D_cum[j], rep.D_cum[j - 1]);
}

TEST(Edi, StreamingMatchesReplay) {
  auto c = from_text(kSmallRun);
  auto tr = run_weak(c);
  EdiAccumulator acc(tr.mesh, tr.ops, c, c.K);
  acc.start(initial_state(c));
  auto tr2 = run_weak(c, [&](const StepContext& ctx) { acc.on_step(ctx); });
  auto a = acc.finish(), b = discrete_edi_check(tr, c);
  ASSERT_EQ(a.edi_slack.size(), b.edi_slack.size());
  for (std::size_t j = 0; j < a.edi_slack.size(); ++j) {
    EXPECT_EQ(a.edi_slack[j], b.edi_slack[j]);
    EXPECT_EQ(a.uedi_slack[j], b.uedi_slack[j]);
  }
}

TEST(Edi, InjectedEnergyFlaggedFromStepThree) {
  auto c = from_text(kSmallRun);
  auto tr = run_weak(c);
  for (std::size_t j = 3; j < tr.snapshots.size(); ++j) tr.snapshots[j].v.array() += 2.0;
  auto rep = discrete_edi_check(tr, c);
  EXPECT_EQ(rep.first_edi_violation(), 3);
  for (std::size_t j = 3; j < rep.edi_slack.size(); ++j) {
    EXPECT_LT(rep.edi_slack[j], -rep.tol_edi);
    EXPECT_LT(rep.uedi_slack[j], -rep.tol_uedi);
  }
  EXPECT_FALSE(rep.edi_passed());
  EXPECT_FALSE(rep.uedi_passed());
}

TEST(Edi, ZeroDataIsExactlyZero) {
  for (std::string pot : {"potential.name = \"quadratic\"\ninitial.chi0 = \"const:0\"\n",
                          "potential.name = \"indicator_box\"\ninitial.chi0 = \"const:1\"\n"}) {
    auto c = from_text("mesh.N = 11\ntime.K = 10\n" + pot);
    auto tr = run_weak(c);
    auto rep = discrete_edi_check(tr, c);
    for (std::size_t j = 0; j < rep.edi_slack.size(); ++j) {
      EXPECT_EQ(rep.edi_slack[j], 0.0);
      EXPECT_EQ(rep.uedi_slack[j], 0.0);
    }
  }
}

TEST(Edi, StrideMustBeOne) {
  auto c = from_text(std::string(kSmallRun) + "output.stride = 5\n");
  auto tr = run_weak(c);
  EXPECT_THROW(discrete_edi_check(tr, c), std::invalid_argument);
}

// --------------------------------------------------------------------- VI

TEST(Vi, TrivialCases) {
  auto mesh = build_mesh(9, 1.0);
  auto ops = assemble_operators(mesh);
  auto pot = make_potential("quadratic");
  SimState p = zero_state(9), s = zero_state(9);
  s.t = 0.1;
  p.chi = s.chi = Vec::Constant(9, 0.3);
  EXPECT_EQ(one_sided_vi_residual(mesh, ops, MaterialLaw{}, pot, p, s, {Vec::Zero(9)}), 0.0);
  // W' vanishes at 0, no load, no motion
  p.chi.setZero();
  s.chi.setZero();
  EXPECT_EQ(one_sided_vi_residual(mesh, ops, MaterialLaw{}, pot, p, s, {-Vec::Ones(9)}), 0.0);
  Vec bad = Vec::Zero(9);
  bad[3] = 0.1;
  EXPECT_THROW(one_sided_vi_residual(mesh, ops, MaterialLaw{}, pot, p, s, {bad}), std::invalid_argument);
}

TEST(Vi, WeakRunSatisfiesInequality) {
  auto c = from_text(kSmallRun);
  auto tr = run_weak(c);
  for (std::size_t j = 1; j < tr.snapshots.size(); ++j) {
    const auto& s = tr.snapshots[j];
    double r = one_sided_vi_residual(tr.mesh, tr.ops, c.material, c.potential, tr.snapshots[j - 1], s,
                                     standard_test_bank(s.chi));
    EXPECT_GE(r, -c.tol.vi) << "step " << j;
  }
  auto ns = nonsmooth_vi_residual(tr, c);
  EXPECT_GE(ns.min(), -c.tol.vi);
}

TEST(Vi, BoxRunSatisfiesNonsmoothInequality) {
  auto c = from_text(R"(
mesh.N = 21
time.T = 0.25
time.K = 50
potential.name = "indicator_box"
potential.ell = 1
initial.chi0 = "affine_cos:0.6:0.3:1"
initial.u0 = "cos:0.5:1"
)");
  auto tr = run_weak(c);
  ASSERT_FALSE(tr.aborted);
  auto ns = nonsmooth_vi_residual(tr, c);
  EXPECT_EQ(ns.residual.size(), 50u);
  EXPECT_GE(ns.min(), -c.tol.vi);
}

// ------------------------------------------------------ strong balance

namespace {
std::pair<double, double> damped_mode(double V, double C, double mu, double c0, double t) {
  using cd = std::complex<double>;
  cd disc = std::sqrt(cd(V * V * mu * mu - 4.0 * C * mu));
  cd r1 = (-V * mu + disc) / 2.0, r2 = (-V * mu - disc) / 2.0;
  cd A = c0 * r2 / (r2 - r1), B = -c0 * r1 / (r2 - r1);
  return {(A * std::exp(r1 * t) + B * std::exp(r2 * t)).real(),
          (A * r1 * std::exp(r1 * t) + B * r2 * std::exp(r2 * t)).real()};
}
} // namespace

TEST(StrongBalance, ZeroDataExactlyZero) {
  auto c = from_text("mesh.N = 11\ntime.K = 10\ninitial.chi0 = \"const:0\"\n");
  auto [tr, mon] = run_strong(c, RegParams::schedule(2), -1);
  auto b = strong_energy_balance_residual(tr);
  EXPECT_EQ(b.max_abs(), 0.0);
}

TEST(StrongBalance, LinearRegimeMatchesClosedForm) {
  auto c = from_text(R"(
mesh.N = 41
time.T = 0.5
time.K = 400
material.a = "constant"
material.V = 0.3
material.C = 2
potential.name = "quadratic"
initial.chi0 = "const:0"
)");
  auto mesh = build_mesh(41, 1.0);
  auto ops = assemble_operators(mesh);
  auto eb = neumann_eigenbasis(mesh, ops, 0.3, 2);
  c.u0 = 0.2 * eb.Y.col(1) - 0.1 * eb.Y.col(2);
  auto [tr, mon] = run_strong(c, RegParams::schedule(3), 2);
  auto b = strong_energy_balance_residual(tr);
  double amp[] = {0.0, 0.2, -0.1};
  auto closed = [&](double t) {
    double E = 0.0;
    for (int k = 1; k <= 2; ++k) {
      auto [ck, vk] = damped_mode(1.0, 2.0 / 0.3, eb.lambda[k], amp[k], t);
      E += 0.5 * vk * vk + 0.5 * (2.0 / 0.3) * eb.lambda[k] * ck * ck;
    }
    return E;
  };
  const double E0 = closed(0.0);
  for (std::size_t j = 0; j < b.t.size(); j += 40)
    EXPECT_NEAR(b.E[j] - b.E[0], closed(b.t[j]) - E0, 2e-5 * E0) << b.t[j];
  EXPECT_LT(b.max_abs(), 1e-4);
}

TEST(StrongBalance, ConstructedImbalanceFlagged) {
  auto c = from_text(std::string(kSmallRun) + "strong.rung = 2\n");
  auto [tr, mon] = run_strong(c, RegParams::schedule(2), -1);
  double clean = strong_energy_balance_residual(tr).max_abs();
  tr.states.back().cdot *= 1.5;
  double bad = strong_energy_balance_residual(tr).final_abs();
  EXPECT_GT(bad, 100.0 * clean);
}

// --------------------------------------------------------- relative energy

namespace {
struct Pair {
  Mesh1D mesh;
  Operators ops;
  MaterialLaw mat;
  PotentialSplit pot;
  SimState s, t;
  Vec chit, chit_ref;
};

Pair random_pair(std::mt19937_64& rng, const std::string& pot, double ell) {
  Pair p{build_mesh(5, 1.0), {}, MaterialLaw{}, make_potential(pot, {{"ell", ell}}), zero_state(5), zero_state(5), {}, {}};
  p.ops = assemble_operators(p.mesh);
  p.mat.C = 1.3;
  p.mat.V = 0.7;
  p.mat.b = make_law("quadratic_floor", 1.0, 0.5);
  for (SimState* s : {&p.s, &p.t}) {
    s->u = random_vec(rng, 5, -1, 1);
    s->v = random_vec(rng, 5, -1, 1);
    s->chi = random_vec(rng, 5, 0.01, 0.99);
  }
  p.chit = random_vec(rng, 5, -1, 0);
  p.chit_ref = random_vec(rng, 5, -1, 0);
  return p;
}
} // namespace

TEST(Relative, IdentityAndHalfCase) {
  std::mt19937_64 rng(2);
  auto p = random_pair(rng, "quadratic", 0.4);
  RelContext c{p.mesh, p.ops, p.mat, p.pot};
  EXPECT_EQ(relative_energy(c, p.s, p.s).total(), 0.0);
  EXPECT_EQ(relative_dissipation(c, p.s, p.s, p.chit, p.chit), 0.0);

  auto mesh = build_mesh(11, 1.0);
  auto ops = assemble_operators(mesh);
  MaterialLaw mat;
  mat.a = make_law("constant");
  RelContext c2{mesh, ops, mat, p.pot};
  SimState a = zero_state(11), b = zero_state(11);
  a.chi = b.chi = Vec::Constant(11, 0.4);
  a.v = b.v = Vec::Constant(11, 0.3);
  a.u = mesh.x;
  EXPECT_NEAR(relative_energy(c2, a, b).total(), 0.5, 1e-14);
}

TEST(Relative, RandomPairsMatchSimpson) {
  std::mt19937_64 rng(8);
  for (std::string pot : {"quadratic", "smooth_double_well", "logarithmic"}) {
    for (int t = 0; t < 20; ++t) {
      auto p = random_pair(rng, pot, 1.2);
      RelContext c{p.mesh, p.ops, p.mat, p.pot};
      const double ell = p.pot.ell;
      auto W = [&](double r) { return p.pot.value(r); };
      auto dW = [&](double r) { return p.pot.convex_d1(r) + p.pot.concave_d1(r); };
      Vec breg(5), a = map_nodal(p.s.chi, p.mat.a.f), b = map_nodal(p.s.chi, p.mat.b.f);
      for (int i = 0; i < 5; ++i) {
        double x = p.s.chi[i], y = p.t.chi[i];
        breg[i] = W(x) - W(y) - dW(y) * (x - y) + 0.5 * ell * sqr(x - y);
      }
      Vec du = p.s.u - p.t.u, dv = p.s.v - p.t.v, dchi = p.s.chi - p.t.chi;
      Vec dr2 = (p.chit - p.chit_ref).array().square();
      double R = oracle::simpson(p.mesh, [&](int e, double th) {
        return 0.5 * sqr(slope(p.mesh, dchi, e)) + interp(breg, e, th) +
               0.5 * p.mat.C * interp(a, e, th) * sqr(slope(p.mesh, du, e)) + 0.5 * sqr(interp(dv, e, th));
      });
      double Wr = oracle::simpson(p.mesh, [&](int e, double th) {
        return p.mat.V * interp(b, e, th) * sqr(slope(p.mesh, dv, e)) + interp(dr2, e, th);
      });
      auto parts = relative_energy(c, p.s, p.t);
      EXPECT_NEAR(parts.total(), R, 1e-9) << pot;
      EXPECT_NEAR(relative_dissipation(c, p.s, p.t, p.chit, p.chit_ref), Wr, 1e-9);
      EXPECT_GE(parts.gradient, 0.0);
      EXPECT_GE(parts.potential, -1e-14);
      EXPECT_GE(parts.elastic, 0.0);
      EXPECT_GE(parts.kinetic, 0.0);
      EXPECT_LE(coupling_term(c, p.s, p.t, p.chit_ref), 0.0);
    }
  }
}

TEST(Relative, KappaReducesToEllSquared) {
  auto mesh = build_mesh(11, 1.0);
  auto ops = assemble_operators(mesh);
  auto pot = make_potential("quadratic", {{"ell", 0.7}});
  MaterialLaw mat;
  RelContext c{mesh, ops, mat, pot};
  SimState st = zero_state(11);
  st.chi.setConstant(0.5);
  EXPECT_NEAR(kappa(c, st, Vec::Zero(11), 1.0), 0.49, 1e-15);
  EXPECT_NEAR(kappa(c, st, Vec::Zero(11), 3.0), 1.47, 1e-14);
}

TEST(Relative, KappaRandomMatchesNorms) {
  std::mt19937_64 rng(4);
  auto p = random_pair(rng, "quadratic", 0.2);
  RelContext c{p.mesh, p.ops, p.mat, p.pot};
  // trapezoid in chi_t, elementwise constant strains
  double s32 = 0.0;
  for (int i = 0; i < 5; ++i) s32 += p.ops.m[i] * std::pow(std::abs(p.chit_ref[i]), 1.5);
  auto lp = [&](const Vec& f, double q) {
    double s = 0.0;
    for (int e = 0; e < 4; ++e) s += p.mesh.h * std::pow(std::abs(slope(p.mesh, f, e)), q);
    return std::pow(s, 1.0 / q);
  };
  double linf = 0.0;
  for (int e = 0; e < 4; ++e) linf = std::max(linf, std::abs(slope(p.mesh, p.t.u, e)));
  double ref = std::pow(s32, 2.0 / 3.0) + sqr(lp(p.t.v, 3)) + 0.04 + sqr(linf) + sqr(lp(p.t.u, 3)) +
               std::pow(lp(p.t.u, 6), 4);
  EXPECT_NEAR(kappa(c, p.t, p.chit_ref, 2.0), 2.0 * ref, 1e-12 * ref);
}

TEST(Rei, IdenticalTrajectories) {
  auto c = from_text(kSmallRun);
  auto tr = run_weak(c);
  auto rs = weak_rated_series(tr);
  auto pair = align(rs, tr.mesh, rs, tr.mesh);
  auto rep = rei_check(pair, c.material, c.potential, 1.0);
  EXPECT_EQ(rep.sup_R(), 0.0);
  EXPECT_EQ(rep.min_slack(), 0.0);
  for (double s : rep.slack) EXPECT_EQ(s, 0.0);
  EXPECT_TRUE(rep.coupling_sign_ok);
  EXPECT_EQ(calibrate_c_rei(pair, c.material, c.potential), 0.0);
}

TEST(Rei, PerturbedPairSignAndCalibration) {
  auto c = from_text(kSmallRun);
  auto ref = run_weak(c);
  auto c2 = c;
  c2.chi0 = (c.chi0.array() - 0.02 * (M_PI * ref.mesh.x.array()).cos().abs()).matrix();
  auto pert = run_weak(c2);
  auto pair = align(weak_rated_series(pert), pert.mesh, weak_rated_series(ref), ref.mesh);
  double C = calibrate_c_rei(pair, c.material, c.potential);
  auto rep = rei_check(pair, c.material, c.potential, C);
  EXPECT_TRUE(rep.coupling_sign_ok);
  EXPECT_GE(rep.min_slack(), 0.0);
  EXPECT_GT(rep.R.front(), 0.0);
  if (C > 0.0) {
    EXPECT_LT(rei_check(pair, c.material, c.potential, 0.9 * C).min_slack(), 0.0);
  }
}

TEST(Rei, MismatchedTimeGridsRejected) {
  auto c = from_text(kSmallRun);
  auto a = run_weak(c);
  auto c2 = c;
  c2.T = 0.2513;
  auto b = run_weak(c2);
  EXPECT_THROW(align(weak_rated_series(a), a.mesh, weak_rated_series(b), b.mesh), std::invalid_argument);
}
