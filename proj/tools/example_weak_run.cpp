// Smallest end-to-end use of the library: one weak run and its energy check.
#include <dsim/dsim.hpp>

#include <cstdio>

int main(int argc, char** argv) {
  using namespace dsim;
  ScenarioConfig c = argc > 1 ? load_scenario(argv[1]) : build_scenario(parse_config_text(R"(
mesh.N = 51
time.T = 0.5
time.K = 100
potential.name = "quadratic"
potential.ell = 0.5
initial.chi0 = "affine_cos:0.8:0.1:1"
initial.u0 = "cos:0.3:1"
)"));
  Trajectory tr = run_weak(c);
  if (tr.aborted) {
    std::fprintf(stderr, "%s\n", tr.error.c_str());
    return 1;
  }
  EnergyReport r = discrete_edi_check(tr, c);
  for (std::size_t j = 0; j < r.t.size(); j += std::max<std::size_t>(1, r.t.size() / 10))
    std::printf("t=%.3f  E=%.6f  D_cum=%.6f  slack=%+.2e\n", r.t[j], r.E[j], r.D_cum[j], r.edi_slack[j]);
  std::printf("min chi %.4f, EDI %s\n", tr.snapshots.back().chi.minCoeff(), r.edi_passed() ? "holds" : "violated");
  return r.edi_passed() ? 0 : 2;
}
