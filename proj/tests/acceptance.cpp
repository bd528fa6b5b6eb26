// One line per acceptance criterion; nonzero exit if any fails.
#include "oracles.hpp"

#include <dsim/dsim.hpp>

#include <chrono>
#include <cstdarg>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

using namespace dsim;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] C%-2d %s: %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string cfg(const std::string& name) { return std::string(DSIM_CONFIG_DIR) + "/" + name; }

template <class F>
void guarded(std::initializer_list<int> ids, const char* title, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    for (int id : ids) report(id, title, false, std::string("exception: ") + e.what());
  }
}

// ------------------------------------------------------------------ 1 + 2

void weak_suite() {
  const char* presets[] = {"suite_logarithmic.cfg", "suite_indicator_box.cfg", "suite_quadratic.cfg",
                           "suite_strong_damage.cfg", "suite_robin_loaded.cfg"};
  bool ok1 = true, ok2 = true;
  std::string d1, d2;
  for (const char* p : presets) {
    auto c = load_scenario(cfg(p));
    Mesh1D mesh = build_mesh(c.N, c.L);
    Operators ops = assemble_operators(mesh, c.lumped_mass);
    EdiAccumulator acc(mesh, ops, c, c.K);
    acc.start(initial_state(c));
    double max_inc = -kInf, chi_min = kInf, chi_max = -kInf;
    int clamps = 0;
    auto t0 = Clock::now();
    auto tr = run_weak(c, [&](const StepContext& ctx) {
      acc.on_step(ctx);
      max_inc = std::max(max_inc, (ctx.cur.chi - ctx.prev.chi).maxCoeff());
      chi_min = std::min(chi_min, ctx.cur.chi.minCoeff());
      chi_max = std::max(chi_max, ctx.cur.chi.maxCoeff());
      clamps += ctx.report.active_lower;
    });
    double secs = seconds_since(t0);
    auto r = acc.finish();
    bool pass1 = !tr.aborted && r.min_edi() >= -1e-6 && secs < 60.0;
    ok1 = ok1 && pass1;
    d1 += fmt("%s min slack %.2e %.1fs%s; ", c.name.c_str(), r.min_edi(), secs, tr.aborted ? " ABORTED" : "");
    if (hypothesis_one(c.material)) {
      bool pass2 = !tr.aborted && max_inc <= 1e-10 && chi_min >= 0.0 && chi_max <= 1.0 && clamps == 0;
      ok2 = ok2 && pass2;
      d2 += fmt("%s max increase %.1e min %.2e clamps %d; ", c.name.c_str(), max_inc, chi_min, clamps);
    } else {
      d2 += fmt("%s outside hypothesis 1, skipped; ", c.name.c_str());
    }
  }
  report(1, "discrete EDI on the scenario suite", ok1, d1);
  report(2, "0 <= chi^k <= chi^{k-1} <= 1 without lower clamping", ok2, d2);
}

// ---------------------------------------------------------------------- 3

void inner_oracle() {
  std::mt19937_64 rng(31337);
  double worst = 0.0;
  auto t0 = Clock::now();
  for (int t = 0; t < 200; ++t) {
    auto r = oracle::random_instance(rng);
    auto p = make_damage_subproblem(r.mesh, r.ops, r.mat, r.pot, r.tau, r.chi_prev, r.u_prev);
    auto [x, rep] = damage_step(p, 1e-13);
    auto d = oracle::dense_damage(p, r.s, r.quadratic_w);
    Vec xo = oracle::box_qp_enumerate(d.H, d.b, d.lo, d.hi);
    worst = std::max(worst, (x - xo).cwiseAbs().maxCoeff());
  }
  double secs = seconds_since(t0);
  report(3, "inner solver vs KKT enumeration", worst <= 1e-8 && secs < 10.0,
         fmt("200 instances, worst max-norm gap %.2e, %.2fs", worst, secs));
}

// ---------------------------------------------------------------------- 4

void regularization_bounds() {
  auto grid = linspace(-2.0, 2.0, 401);
  bool ok = true;
  std::string d;
  auto t0 = Clock::now();
  for (const char* g : {"indicator_nonpositive", "indicator_box"}) {
    double worst = kInf, exact = kInf;
    for (double delta : {0.2, 0.1, 0.05}) {
      auto reg = make_regularized(graph_by_name(g), delta);
      auto p = regularization_property_check(reg, grid);
      ok = ok && p.all_ok();
      worst = std::min({worst, p.margin_value, p.margin_d1, p.margin_d2, p.margin_pot_upper, p.margin_pot_lower});
      // without the check tolerance; the slope bound is attained where the Yosida map is linear
      double m = p.margin_d1 - p.tol;
      exact = std::min(exact, m);
    }
    d += fmt("%s smallest margin %.3e (slope bound gap %.1e); ", g, worst, exact);
  }
  double secs = seconds_since(t0);
  report(4, "regularization bounds", ok && secs < 5.0, d + fmt("%.2fs", secs));
}

// ---------------------------------------------------------------------- 5

void eigenbasis() {
  auto errs = [](int N) {
    auto mesh = build_mesh(N, 1.0);
    auto ops = assemble_operators(mesh);
    auto eb = neumann_eigenbasis(mesh, ops, 1.0, 5);
    std::vector<double> e{std::abs(eb.lambda[0])};
    for (int k = 1; k <= 5; ++k) e.push_back(std::abs(eb.lambda[k] - sqr(k * M_PI)) / sqr(k * M_PI));
    return e;
  };
  auto a = errs(401), b = errs(801);
  bool ok = a[0] <= 1e-10;
  double worst = 0.0, min_ratio = kInf;
  for (int k = 1; k <= 5; ++k) {
    worst = std::max(worst, a[k]);
    min_ratio = std::min(min_ratio, a[k] / b[k]);
  }
  ok = ok && worst <= 1e-3 && min_ratio >= 3.5;
  report(5, "Neumann eigenvalues", ok,
         fmt("max rel error %.2e at N=401, smallest refinement factor %.3f", worst, min_ratio));
}

// ---------------------------------------------------------------------- 6

std::pair<double, double> damped_mode(double V, double C, double mu, double c0, double t) {
  using cd = std::complex<double>;
  cd disc = std::sqrt(cd(V * V * mu * mu - 4.0 * C * mu));
  cd r1 = (-V * mu + disc) / 2.0, r2 = (-V * mu - disc) / 2.0;
  cd A = c0 * r2 / (r2 - r1), B = -c0 * r1 / (r2 - r1);
  return {(A * std::exp(r1 * t) + B * std::exp(r2 * t)).real(),
          (A * r1 * std::exp(r1 * t) + B * r2 * std::exp(r2 * t)).real()};
}

void linear_regime() {
  // u = c(t) cos(pi x); chi = 0.5 e^{-t} + 0.04 e^{-(1+pi^2)t} cos(pi x); the constant mode of u is zero
  auto base = load_scenario(cfg("linear_regime.cfg"));
  std::vector<double> lt, le;
  std::string d;
  for (int K : {100, 200, 400}) {
    auto c = with_grid(base, base.N, K);
    auto tr = run_weak(c);
    if (tr.aborted) throw SolverError(tr.error);
    const auto& s = tr.snapshots.back();
    auto [cu, cv] = damped_mode(c.material.V, c.material.C, M_PI * M_PI, 0.1, c.T);
    Vec ue(c.N), ve(c.N), xe(c.N);
    for (int i = 0; i < c.N; ++i) {
      double x = tr.mesh.x[i];
      ue[i] = cu * std::cos(M_PI * x);
      ve[i] = cv * std::cos(M_PI * x);
      xe[i] = 0.5 * std::exp(-c.T) + 0.04 * std::exp(-(1.0 + M_PI * M_PI) * c.T) * std::cos(M_PI * x);
    }
    double e = std::sqrt(lumped_sq(tr.ops.m, s.u - ue) + lumped_sq(tr.ops.m, s.v - ve) +
                         lumped_sq(tr.ops.m, s.chi - xe));
    lt.push_back(std::log(c.tau()));
    le.push_back(std::log(e));
    d += fmt("tau=1/%d err %.3e; ", K, e);
  }
  double mt = (lt[0] + lt[1] + lt[2]) / 3, me = (le[0] + le[1] + le[2]) / 3, num = 0, den = 0;
  for (int i = 0; i < 3; ++i) num += (lt[i] - mt) * (le[i] - me), den += sqr(lt[i] - mt);
  double order = num / den;
  report(6, "linear regime vs modal solution", order >= 0.9, d + fmt("fitted order %.3f", order));
}

// ---------------------------------------------------------------------- 7

void mean_identity() {
  auto base = load_scenario(cfg("strong_smooth.cfg"));
  struct Case { const char* name; std::map<std::string, ConfigValue> kv; };
  std::vector<Case> cases{
      {"f=0", {}},
      {"f=const", {{"forcing.f.profile", ConfigValue{std::string("const:1")}},
                   {"forcing.f.kind", ConfigValue{std::string("constant")}},
                   {"forcing.f.amp", ConfigValue{1.0}}}},
      {"f=sin(2 pi t)", {{"forcing.f.profile", ConfigValue{std::string("const:1")}},
                         {"forcing.f.kind", ConfigValue{std::string("sin")}},
                         {"forcing.f.amp", ConfigValue{1.0}},
                         {"forcing.f.freq", ConfigValue{1.0}}}}};
  bool ok = true;
  std::string d;
  for (const auto& cs : cases) {
    auto c = with_keys(base, cs.kv);
    auto [tr, mon] = run_strong(c, reg_params(c), c.strong.n_modes);
    if (tr.aborted) throw SolverError(tr.error);
    double worst = 0.0;
    for (std::size_t j = 0; j < tr.states.size(); ++j) {
      Vec u = tr.sys->displacement(tr.states[j].c);
      worst = std::max(worst, mon.mean_residual[j] / (1.0 + std::sqrt(tr.sys->ops.M.quad(u))));
    }
    ok = ok && worst <= 1e-8;
    d += fmt("%s worst scaled residual %.2e; ", cs.name, worst);
  }
  report(7, "mean identity in strong mode", ok, d);
}

// ---------------------------------------------------------------------- 8

void energy_balance() {
  auto base = load_scenario(cfg("strong_smooth.cfg"));
  std::vector<double> res;
  std::string d;
  for (int steps : {100, 200, 400}) {
    auto c = with_keys(base, {{"strong.steps", ConfigValue{double(steps)}}});
    auto [tr, mon] = run_strong(c, reg_params(c), c.strong.n_modes);
    if (tr.aborted) throw SolverError(tr.error);
    res.push_back(strong_energy_balance_residual(tr).final_abs());
    d += fmt("steps %d residual %.3e; ", steps, res.back());
  }
  double r1 = res[0] / res[1], r2 = res[1] / res[2];
  report(8, "strong energy balance under tau refinement", r1 >= 3.0 && r2 >= 3.0, d + fmt("ratios %.2f %.2f", r1, r2));
}

// ---------------------------------------------------------------------- 9

void weak_strong() {
  auto base = load_scenario(cfg("compare_box.cfg"));
  std::vector<double> sup;
  std::string d;
  auto t0 = Clock::now();
  for (int l = 0; l < 3; ++l) {
    auto c = with_keys(base, {{"mesh.N", ConfigValue{double((base.N - 1) * (1 << l) + 1)}},
                              {"time.K", ConfigValue{double(base.K << l)}},
                              {"strong.rung", ConfigValue{double(base.strong.rung + l)}}});
    auto cr = run_compare(c);
    sup.push_back(cr.rep.sup_R());
    d += fmt("N=%d K=%d sup R %.3e; ", c.N, c.K, sup.back());
  }
  double secs = seconds_since(t0);
  double r1 = sup[0] / sup[1], r2 = sup[1] / sup[2];
  report(9, "weak-strong agreement ladder", r1 >= 2.0 && r2 >= 2.0 && secs < 600.0,
         d + fmt("ratios %.2f %.2f, %.1fs", r1, r2, secs));
}

// --------------------------------------------------------------------- 10

void gronwall_envelope() {
  auto base = load_scenario(cfg("compare_perturbed.cfg"));
  Mesh1D mesh = build_mesh(base.N, base.L);
  Operators ops = assemble_operators(mesh);
  std::optional<double> C;
  bool ok = true;
  std::string d;
  for (double eps : {1e-2, 1e-3}) {
    std::string prof = "cos:" + fmt_num(-eps * std::sqrt(2.0)) + ":2";
    auto c = with_keys(base, {{"compare.perturb", ConfigValue{prof}}});
    double norm = std::sqrt(lumped_sq(ops.m, perturbed(c).chi0 - c.chi0));
    auto cr = run_compare(c, C);
    if (!C) C = cr.rep.C_REI;
    double env = cr.rep.envelope_ratio();
    ok = ok && env <= 1.5;
    d += fmt("|dchi0|=%.2e C_REI=%.4g envelope ratio %.4f; ", norm, cr.rep.C_REI, env);
  }
  report(10, "Gronwall envelope with frozen C_REI", ok, d);
}

// --------------------------------------------------------------------- 11

void ladder() {
  auto c = load_scenario(cfg("strong_smooth.cfg"));
  c = with_keys(c, {{"strong.steps", ConfigValue{400.0}}});
  std::vector<SimState> fin;
  for (int n = 1; n <= 4; ++n) {
    auto [tr, mon] = run_strong(c, RegParams::schedule(n), c.strong.n_modes);
    if (tr.aborted) throw SolverError(tr.error);
    fin.push_back(tr.nodal(tr.states.size() - 1));
  }
  auto ops = assemble_operators(build_mesh(c.N, c.L));
  std::vector<double> diff;
  for (int n = 1; n < 4; ++n)
    diff.push_back(std::sqrt(lumped_sq(ops.m, fin[n].u - fin[n - 1].u) + lumped_sq(ops.m, fin[n].v - fin[n - 1].v) +
                             lumped_sq(ops.m, fin[n].chi - fin[n - 1].chi)));
  double r1 = diff[1] / diff[0], r2 = diff[2] / diff[1];
  report(11, "delta/nu ladder coherence", r1 <= 0.8 && r2 <= 0.8,
         fmt("differences %.3e %.3e %.3e, ratios %.3f %.3f", diff[0], diff[1], diff[2], r1, r2));
}

// --------------------------------------------------------------------- 12

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void determinism() {
  struct Run { const char* config; const char* mode; };
  Run runs[] = {{"suite_robin_loaded.cfg", "weak"}, {"strong_smooth.cfg", "strong"}, {"compare_perturbed.cfg", "compare"},
                {"strong_smooth.cfg", "regularize-demo"}, {"strong_smooth.cfg", "eigs"}, {"suite_quadratic.cfg", "validate"}};
  auto root = fs::temp_directory_path() / "dsim_acceptance_rerun";
  fs::remove_all(root);
  bool ok = true;
  std::size_t files = 0;
  std::string d;
  for (const auto& r : runs) {
    std::string tag = std::string(r.mode) + "_" + fs::path(r.config).stem().string();
    for (const char* rep : {"a", "b"}) {
      std::string cmd = std::string(DSIM_CLI_PATH) + " --config " + cfg(r.config) + " --mode " + r.mode + " --out " +
                        (root / rep / tag).string() + " > /dev/null 2>&1";
      int rc = std::system(cmd.c_str());
      if (!WIFEXITED(rc) || WEXITSTATUS(rc) == 1) {
        ok = false;
        d += tag + " run failed; ";
      }
    }
    for (auto& e : fs::recursive_directory_iterator(root / "a" / tag)) {
      if (!e.is_regular_file()) continue;
      auto other = root / "b" / tag / fs::relative(e.path(), root / "a" / tag);
      ++files;
      if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
        ok = false;
        d += "differs: " + fs::relative(e.path(), root).string() + "; ";
      }
    }
  }
  report(12, "bit-identical reruns", ok && files > 0, d + fmt("%zu files compared across 6 modes", files));
}

} // namespace

int main() {
  auto t0 = Clock::now();
  guarded({1, 2}, "discrete EDI / constraint", weak_suite);
  guarded({3}, "inner solver oracle", inner_oracle);
  guarded({4}, "regularization bounds", regularization_bounds);
  guarded({5}, "Neumann eigenvalues", eigenbasis);
  guarded({6}, "linear regime", linear_regime);
  guarded({7}, "mean identity", mean_identity);
  guarded({8}, "strong energy balance", energy_balance);
  guarded({9}, "weak-strong agreement", weak_strong);
  guarded({10}, "Gronwall envelope", gronwall_envelope);
  guarded({11}, "ladder coherence", ladder);
  guarded({12}, "determinism", determinism);
  std::printf("%d failing criteria, %.1fs total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
