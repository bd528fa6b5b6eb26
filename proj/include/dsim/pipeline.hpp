#pragma once

#include "io.hpp"

namespace dsim {

/// Rebuilds a scenario with some keys replaced.
inline ScenarioConfig with_keys(const ScenarioConfig& c, const std::map<std::string, ConfigValue>& kv) {
  ConfigMap raw = c.raw;
  for (auto& [k, v] : kv) raw[k] = v;
  return build_scenario(raw);
}

inline ScenarioConfig with_grid(const ScenarioConfig& c, int N, int K) {
  return with_keys(c, {{"mesh.N", ConfigValue{double(N)}}, {"time.K", ConfigValue{double(K)}}});
}

/// Tested-run initial damage: chi0 plus the compare.perturb profile.
inline ScenarioConfig perturbed(const ScenarioConfig& c) {
  ScenarioConfig p = c;
  Mesh1D mesh = build_mesh(c.N, c.L);
  p.chi0 += make_profile("compare.perturb", ConfigValue{c.compare.perturb}, mesh.x, c.L);
  for (int i = 0; i < c.N; ++i)
    if (!c.potential.in_domain(p.chi0[i]) || p.chi0[i] < 0.0 || p.chi0[i] > 1.0)
      throw ConfigError("compare.perturb", "perturbed chi0 leaves [0,1] or the potential domain");
  return p;
}

inline RegParams reg_params(const ScenarioConfig& c) {
  RegParams r = RegParams::schedule(c.strong.rung);
  if (c.strong.delta > 0.0) r.delta = c.strong.delta;
  if (c.strong.nu > 0.0) r.nu = c.strong.nu;
  return r;
}

struct CompareRun {
  RelativeReport rep;
  std::size_t pairs = 0;
  int ref_N = 0, ref_steps = 0;
};

/// Weak run (perturbed data) against a strong surrogate on a refined grid, or against the unperturbed weak run.
inline CompareRun run_compare(const ScenarioConfig& c, std::optional<double> frozen_C = std::nullopt) {
  ScenarioConfig ct = perturbed(c);
  Trajectory tw = run_weak(ct);
  if (tw.aborted) throw SolverError("tested weak run failed: " + tw.error);
  CompareRun out;
  AlignedPair pair;
  if (c.compare.reference == "strong") {
    const int r = c.compare.refine;
    require(r >= 1, "compare.refine must be >= 1");
    ScenarioConfig cs = with_keys(c, {{"mesh.N", ConfigValue{double((c.N - 1) * r + 1)}},
                                      {"strong.steps", ConfigValue{double(c.K * r)}},
                                      {"strong.record_every", ConfigValue{double(r)}}});
    auto [ts, mon] = run_strong(cs, reg_params(cs), cs.strong.n_modes);
    if (ts.aborted) throw SolverError("strong reference failed: " + ts.error);
    Mesh1D ms = build_mesh(cs.N, cs.L);
    pair = align(weak_rated_series(tw), tw.mesh, strong_rated_series(ts), ms);
    out.ref_N = cs.N;
    out.ref_steps = c.K * r;
  } else {
    Trajectory tr = run_weak(c);
    if (tr.aborted) throw SolverError("reference weak run failed: " + tr.error);
    pair = align(weak_rated_series(tw), tw.mesh, weak_rated_series(tr), tr.mesh);
    out.ref_N = c.N;
    out.ref_steps = c.K;
  }
  double C = frozen_C ? *frozen_C
                      : (c.compare.calibrate ? calibrate_c_rei(pair, c.material, c.potential) : c.compare.C_REI);
  out.rep = rei_check(pair, c.material, c.potential, C);
  out.pairs = pair.a.size();
  return out;
}

inline MonotoneGraph graph_by_name(const std::string& name) {
  if (name == "indicator_nonpositive") return indicator_nonpositive();
  return make_potential(name).convex_part;
}

} // namespace dsim
