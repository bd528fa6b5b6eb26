#include <dsim/dsim.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace dsim;

namespace {

constexpr int kOk = 0, kError = 1, kCheckFailed = 2;

struct Out {
  std::string dir;
  std::vector<std::string> files;

  std::string path(const std::string& rel) {
    files.push_back(rel);
    return dir + "/" + rel;
  }
  void csv(const std::string& rel, const std::vector<std::string>& h, const std::vector<std::vector<double>>& c) {
    write_csv(path(rel), h, c);
  }
  void json_file(const std::string& rel, const json& j) { write_json(path(rel), j); }
};

json checks_json(const ValidationReport& r) {
  json a = json::array();
  for (const auto& c : r.checks) {
    json e{{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"detail", c.detail}};
    e["witness"] = c.witness ? json(*c.witness) : json(nullptr);
    a.push_back(e);
  }
  return a;
}

int run_validate(const ScenarioConfig& c, Out& out) {
  auto rep = validate_material(c.material, default_validation_grid());
  const auto& p = c.potential;
  out.json_file("validation.json",
                {{"schema_version", kSchemaVersion}, {"hypotheses_passed", rep.all_passed()},
                 {"checks", checks_json(rep)},
                 {"potential", {{"name", p.name}, {"ell", p.ell}, {"lo", fmt_num(p.lo)}, {"hi", fmt_num(p.hi)}}},
                 {"tau_max", fmt_num(tau_max(p))},
                 {"tau", c.tau()}});
  return rep.all_passed() ? kOk : kCheckFailed;
}

int run_weak_mode(const ScenarioConfig& c, Out& out) {
  Mesh1D mesh = build_mesh(c.N, c.L);
  Operators ops = assemble_operators(mesh, c.lumped_mass);
  EdiAccumulator acc(mesh, ops, c, c.K);
  acc.start(initial_state(c));
  std::vector<int> vi_steps;
  std::vector<double> vi;
  double max_increase = -kInf;
  int active_lower = 0;
  auto tr = run_weak(c, [&](const StepContext& ctx) {
    acc.on_step(ctx);
    max_increase = std::max(max_increase, (ctx.cur.chi - ctx.prev.chi).maxCoeff());
    active_lower += ctx.report.active_lower;
    if (ctx.k % c.output_stride == 0) {
      vi_steps.push_back(ctx.k);
      vi.push_back(nonsmooth_vi_step(mesh, ops, c, ctx.prev, ctx.cur, bounded_test_bank(ctx.cur.chi)));
    }
  });
  EnergyReport er = acc.finish();

  ensure_dir(out.dir + "/snapshots");
  for (const auto& f : write_snapshots(out.dir + "/snapshots", mesh, tr.snapshots, tr.snapshot_steps))
    out.files.push_back("snapshots/" + f);
  write_energy_csv(out.path("energies.csv"), er);
  std::vector<double> vs(vi_steps.begin(), vi_steps.end());
  out.csv("vi.csv", {"step", "residual"}, {vs, vi});

  double chi_min = kInf;
  for (const auto& s : tr.snapshots) chi_min = std::min(chi_min, s.chi.minCoeff());
  double vi_min = vi.empty() ? 0.0 : *std::min_element(vi.begin(), vi.end());
  bool vi_ok = vi_min >= -c.tol.vi;
  json rep = energy_report_json(er);
  rep["schema_version"] = kSchemaVersion;
  rep["mode"] = "weak";
  rep["aborted"] = tr.aborted;
  rep["failed_step"] = tr.failed_step;
  rep["error"] = tr.error;
  rep["vi_min_residual"] = vi_min;
  rep["vi_tolerance"] = c.tol.vi;
  rep["vi_passed"] = vi_ok;
  rep["chi_min"] = chi_min;
  rep["chi_max_increase"] = max_increase;
  rep["lower_clamp_activations"] = active_lower;
  out.json_file("report.json", rep);
  if (tr.aborted) {
    std::fprintf(stderr, "weak run stopped at step %d: %s\n", tr.failed_step, tr.error.c_str());
    return kError;
  }
  return (er.edi_passed() && er.uedi_passed() && vi_ok && !er.infeasible) ? kOk : kCheckFailed;
}

int run_strong_mode(const ScenarioConfig& c, Out& out) {
  auto [tr, mon] = run_strong(c, reg_params(c), c.strong.n_modes);
  const StrongSystem& s = *tr.sys;
  std::vector<SimState> nodal;
  for (std::size_t j = 0; j < tr.states.size(); ++j) nodal.push_back(tr.nodal(j));
  ensure_dir(out.dir + "/snapshots");
  for (const auto& f : write_snapshots(out.dir + "/snapshots", s.mesh, nodal, tr.steps))
    out.files.push_back("snapshots/" + f);

  auto b = strong_energy_balance_residual(tr);
  out.csv("energies.csv", {"t", "E", "D_cum", "V", "work", "cubic", "residual"},
          {b.t, b.E, b.D_cum, b.V, b.work, b.cubic, b.residual});

  bool mean_ok = true;
  for (std::size_t j = 0; j < mon.mean_residual.size() && j < nodal.size(); ++j)
    if (mon.mean_residual[j] > 1e-8 * (1.0 + std::sqrt(s.ops.M.quad(nodal[j].u)))) mean_ok = false;
  out.json_file("monitor.json",
                {{"t", vec_json(mon.t)}, {"ut_H2", vec_json(mon.ut_H2)}, {"chi_H2", vec_json(mon.chi_H2)},
                 {"omega_L2", vec_json(mon.omega_L2)}, {"ut_H3_int", vec_json(mon.ut_H3_int)},
                 {"psi", vec_json(mon.psi)}, {"mean_residual", vec_json(mon.mean_residual)},
                 {"psi_max", mon.psi_max}, {"horizon_hit", mon.horizon_hit},
                 {"horizon_time", mon.horizon_time}, {"beta", mon.beta},
                 {"exploratory_horizon", fmt_num(mon.exploratory_horizon)},
                 {"nu_omega_t_sup", mon.nu_omega_t_sup}, {"elliptic_residual", mon.elliptic_residual}});
  out.json_file("report.json", {{"schema_version", kSchemaVersion}, {"mode", "strong"},
                                {"delta", s.reg.delta}, {"nu", s.reg.nu}, {"modes", s.modes()},
                                {"tau_ode", tr.tau}, {"aborted", tr.aborted}, {"error", tr.error},
                                {"balance_final_abs", b.final_abs()}, {"balance_max_abs", b.max_abs()},
                                {"mean_identity_passed", mean_ok}, {"horizon_hit", mon.horizon_hit}});
  if (tr.aborted) {
    std::fprintf(stderr, "strong run stopped: %s\n", tr.error.c_str());
    return kError;
  }
  return mean_ok ? kOk : kCheckFailed;
}

int run_compare_mode(const ScenarioConfig& c, Out& out) {
  auto cr = run_compare(c);
  const auto& r = cr.rep;
  write_relative_csv(out.path("relative.csv"), r);
  double tol = 1e-12 * (1.0 + (r.R.empty() ? 0.0 : r.R.front()));
  bool slack_ok = r.min_slack() >= -tol;
  out.json_file("report.json", {{"schema_version", kSchemaVersion}, {"mode", "compare"},
                                {"reference", c.compare.reference}, {"reference_N", cr.ref_N},
                                {"reference_steps", cr.ref_steps}, {"pairs", cr.pairs},
                                {"C_REI", r.C_REI}, {"calibrated", c.compare.calibrate},
                                {"sup_R", r.sup_R()}, {"R0", r.R.empty() ? 0.0 : r.R.front()},
                                {"min_slack", r.min_slack()}, {"envelope_ratio", r.envelope_ratio()},
                                {"coupling_sign_ok", r.coupling_sign_ok}, {"rei_passed", slack_ok}});
  std::printf("sup_R = %.6e\n", r.sup_R());
  return (slack_ok && r.coupling_sign_ok) ? kOk : kCheckFailed;
}

int run_regularize_mode(const ScenarioConfig& c, Out& out) {
  const auto& rg = c.regularize;
  MonotoneGraph g = graph_by_name(rg.graph);
  auto grid = linspace(rg.x_min, rg.x_max, rg.points);
  json reps = json::array();
  bool ok = true;
  for (double d : rg.deltas) {
    auto reg = make_regularized(g, d);
    std::vector<double> yo, val, d1, d2, pot;
    for (double x : grid) {
      Triple t = reg.raw(x);
      yo.push_back(reg.yosida(x));
      val.push_back(t.value);
      d1.push_back(t.d1);
      d2.push_back(t.d2);
      pot.push_back(g.has_potential() ? reg.raw_potential(x) : 0.0);
    }
    char name[64];
    std::snprintf(name, sizeof name, "regularize_delta_%g.csv", d);
    out.csv(name, {"x", "yosida", "value", "d1", "d2", "potential"}, {grid, yo, val, d1, d2, pot});
    auto p = regularization_property_check(reg, grid);
    ok = ok && p.all_ok();
    reps.push_back({{"delta", d}, {"margin_value", p.margin_value}, {"margin_d1", p.margin_d1},
                    {"margin_d2", p.margin_d2}, {"margin_potential_upper", fmt_num(p.margin_pot_upper)},
                    {"margin_potential_lower", fmt_num(p.margin_pot_lower)}, {"passed", p.all_ok()}});
  }
  out.json_file("report.json", {{"schema_version", kSchemaVersion}, {"mode", "regularize-demo"},
                                {"graph", rg.graph}, {"checks", reps}, {"passed", ok}});
  return ok ? kOk : kCheckFailed;
}

int run_eigs_mode(const ScenarioConfig& c, Out& out) {
  Mesh1D mesh = build_mesh(c.N, c.L);
  Operators ops = assemble_operators(mesh, c.lumped_mass);
  int n = c.strong.n_modes > 0 ? std::min(c.strong.n_modes, c.N - 2) : std::min(10, c.N - 2);
  auto eb = neumann_eigenbasis(mesh, ops, c.material.V, n);
  std::vector<double> k, lam, exact, rel;
  for (int j = 0; j <= n; ++j) {
    double e = c.material.V * sqr(j * M_PI / c.L);
    k.push_back(j);
    lam.push_back(eb.lambda[j]);
    exact.push_back(e);
    rel.push_back(j == 0 ? std::abs(eb.lambda[j]) : std::abs(eb.lambda[j] - e) / e);
  }
  out.csv("eigen.csv", {"k", "lambda", "exact", "rel_error"}, {k, lam, exact, rel});
  out.json_file("report.json", {{"schema_version", kSchemaVersion}, {"mode", "eigs"}, {"modes", n + 1},
                                {"residual", eb.residual}, {"ortho_error", eb.ortho_error}});
  return kOk;
}

std::string override_key(const std::string& k) {
  if (k.find('.') != std::string::npos) return k;
  if (k.rfind("tol_", 0) == 0) return "solver." + k;
  return "solver.tol_" + k;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Damage-viscoelasticity simulator"};
  std::string config, mode, outdir = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config, "scenario file")->required();
  app.add_option("--mode", mode, "weak | strong | compare | regularize-demo | eigs | validate")
      ->check(CLI::IsMember({"weak", "strong", "compare", "regularize-demo", "eigs", "validate"}));
  app.add_option("--out", outdir, "output directory");
  app.add_option("--tol-override", overrides, "KEY=VALUE, repeatable");
  app.add_option("--seed", seed, "recorded in the manifest");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kError;
  }

  try {
    ConfigMap raw = read_config_file(config);
    for (const auto& o : overrides) {
      auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError(o, "override must look like KEY=VALUE");
      std::string key = override_key(trim(o.substr(0, eq)));
      raw[key] = parse_config_value(key, o.substr(eq + 1));
    }
    if (seed) raw["seed"] = ConfigValue{static_cast<double>(*seed)};
    if (mode.empty()) {
      auto it = raw.find("mode");
      mode = it != raw.end() ? std::get<std::string>(it->second.v) : "weak";
    }
    ScenarioConfig c = build_scenario(raw);

    ensure_dir(outdir);
    Out out{outdir, {}};
    int status = kError;
    if (mode == "validate") status = run_validate(c, out);
    else if (mode == "weak") status = run_weak_mode(c, out);
    else if (mode == "strong") status = run_strong_mode(c, out);
    else if (mode == "compare") status = run_compare_mode(c, out);
    else if (mode == "regularize-demo") status = run_regularize_mode(c, out);
    else if (mode == "eigs") status = run_eigs_mode(c, out);
    else throw ConfigError("mode", "unknown mode " + mode);

    RunManifest m;
    m.name = c.name;
    m.mode = mode;
    m.config_hash = config_hash(raw);
    m.canonical_config = canonical_config(raw);
    m.seed = c.seed;
    m.exit_status = status;
    m.files = out.files;
    write_json(outdir + "/manifest.json", m.to_json(outdir));
    std::printf("%s: %s\n", mode.c_str(), status == kOk ? "ok" : status == kCheckFailed ? "check failed" : "error");
    return status;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  }
  return kError;
}
