#pragma once

#include "discretization.hpp"
#include "model.hpp"
#include "quadrature.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

namespace dsim {

/// Scalar function of time: analytic preset or piecewise-linear table.
struct TimeFunction {
  std::string kind = "zero"; // zero | constant | linear | sin | cos | table
  double amp = 0.0, freq = 1.0, phase = 0.0, offset = 0.0;
  std::vector<double> ts, vs;

  bool is_zero() const { return kind == "zero" || (kind != "table" && amp == 0.0 && offset == 0.0); }

  double operator()(double t) const {
    if (kind == "zero") return 0.0;
    if (kind == "constant") return amp;
    if (kind == "linear") return amp * t + offset;
    if (kind == "sin") return amp * std::sin(2.0 * M_PI * freq * t + phase) + offset;
    if (kind == "cos") return amp * std::cos(2.0 * M_PI * freq * t + phase) + offset;
    if (kind == "table") {
      if (t <= ts.front()) return vs.front();
      if (t >= ts.back()) return vs.back();
      auto it = std::upper_bound(ts.begin(), ts.end(), t);
      std::size_t j = it - ts.begin();
      double s = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
      return (1.0 - s) * vs[j - 1] + s * vs[j];
    }
    throw std::invalid_argument("unknown time function kind: " + kind);
  }

  // Breakpoints of the table inside (a, b), plus the ends.
  std::vector<double> pieces(double a, double b) const {
    std::vector<double> br{a};
    if (kind == "table")
      for (double t : ts)
        if (t > a && t < b) br.push_back(t);
    br.push_back(b);
    return br;
  }

  // int_a^b (c - r)^p theta(r) dr for p in {0, 1}
  double weighted_integral(double a, double b, double c, int p) const {
    if (kind == "zero" || a == b) return 0.0;
    auto w = [&](double r) { return p == 0 ? 1.0 : (c - r); };
    if (kind == "constant" || kind == "linear" || kind == "table") {
      // integrand is polynomial of degree <= 2 on each piece: Simpson is exact
      double s = 0.0;
      auto br = pieces(a, b);
      for (std::size_t i = 0; i + 1 < br.size(); ++i) {
        double l = br[i], r = br[i + 1], m = 0.5 * (l + r);
        s += (r - l) / 6.0 * (w(l) * (*this)(l) + 4.0 * w(m) * (*this)(m) + w(r) * (*this)(r));
      }
      return s;
    }
    auto q = integrate([&](double r) { return w(r) * (*this)(r); }, a, b, 1e-14);
    if (!q.converged) throw SolverError("time quadrature did not converge");
    return q.value;
  }
  double integral(double a, double b) const { return weighted_integral(a, b, 0.0, 0); }
  double moment(double a, double b, double c) const { return weighted_integral(a, b, c, 1); }
};

/// Per-interval means (1/tau) int_{t_{k-1}}^{t_k} theta.
inline Vec local_time_means(const TimeFunction& f, int K, double tau) {
  require(K >= 1 && tau > 0.0, "local_time_means: need K >= 1 and tau > 0");
  Vec out(K);
  for (int k = 0; k < K; ++k) out[k] = f.integral(k * tau, (k + 1) * tau) / tau;
  return out;
}

/// f(x,t) = profile(x) theta(t); boundary data g0(t) at x=0 and gL(t) at x=L.
struct Forcing {
  Vec profile;
  TimeFunction theta, g0, gL;

  bool body_zero() const { return theta.is_zero() || profile.cwiseAbs().maxCoeff() == 0.0; }
  bool boundary_zero() const { return g0.is_zero() && gL.is_zero(); }
};

struct SolverTolerances {
  double inner = 1e-10; // KKT residual, gradient units
  double lin = 1e-12;
  double ell = 1e-11;
  double ode = 1e-10;
  double mono = 1e-10;
  double vi = 1e-8;
  int fista_max = 50;
  int newton_max = 200;
};

struct StrongSettings {
  int n_modes = -1; // -1: all admissible modes
  int rung = 3;
  double delta = -1.0, nu = -1.0; // override the schedule when positive
  int steps = -1;                 // ode steps over [0,T]; -1: same as time.K
  double psi_max = 1e6;
  std::string varpi0 = "zero";
  int record_every = 1;
};

struct CompareSettings {
  int refine = 4;
  double C_REI = 1.0;
  bool calibrate = false;
  std::string reference = "strong"; // strong | weak
  std::string perturb = "zero";     // profile added to chi0 of the tested run
};

struct RegularizeSettings {
  std::string graph = "indicator_nonpositive";
  std::vector<double> deltas{0.2, 0.1, 0.05};
  double x_min = -2.0, x_max = 2.0;
  int points = 401;
};

struct ConfigValue {
  std::variant<double, std::string, bool, std::vector<double>> v;

  std::string canonical() const {
    char buf[64];
    if (auto d = std::get_if<double>(&v)) {
      std::snprintf(buf, sizeof buf, "%.17g", *d);
      return buf;
    }
    if (auto s = std::get_if<std::string>(&v)) return "\"" + *s + "\"";
    if (auto b = std::get_if<bool>(&v)) return *b ? "true" : "false";
    std::string out = "[";
    auto& a = std::get<std::vector<double>>(v);
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", a[i]);
      out += (i ? ", " : "") + std::string(buf);
    }
    return out + "]";
  }
};

using ConfigMap = std::map<std::string, ConfigValue>;

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline ConfigValue parse_config_value(const std::string& key, const std::string& raw) {
  std::string t = trim(raw);
  if (t.empty()) throw ConfigError(key, "empty value");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') throw ConfigError(key, "unterminated string");
    return {t.substr(1, t.size() - 2)};
  }
  if (t == "true" || t == "false") return {t == "true"};
  if (t.front() == '[') {
    if (t.back() != ']') throw ConfigError(key, "unterminated array");
    std::vector<double> a;
    std::stringstream ss(t.substr(1, t.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        std::size_t pos;
        a.push_back(std::stod(item, &pos));
        if (pos != item.size()) throw std::invalid_argument("");
      } catch (...) {
        throw ConfigError(key, "bad array element '" + item + "'");
      }
    }
    return {a};
  }
  try {
    std::size_t pos;
    double d = std::stod(t, &pos);
    if (pos != t.size()) throw std::invalid_argument("");
    return {d};
  } catch (...) {
    throw ConfigError(key, "cannot parse value '" + t + "'");
  }
}

/// key = value lines, '#' comments.
inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap m;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    m[key] = parse_config_value(key, line.substr(eq + 1));
  }
  return m;
}

inline ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string canonical_config(const ConfigMap& m) {
  std::string s;
  for (auto& [k, v] : m) s += k + " = " + v.canonical() + "\n";
  return s;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const ConfigMap& m) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config(m))));
  return buf;
}

struct ScenarioConfig {
  std::string name = "scenario";
  int N = 101;
  double L = 1.0, T = 1.0;
  int K = 100;
  bool lumped_mass = false;
  MaterialLaw material;
  PotentialSplit potential = make_potential("quadratic");
  Vec u0, v0, chi0;
  std::string varpi0 = "zero";
  Vec varpi0_values;
  Forcing forcing;
  SolverTolerances tol;
  StrongSettings strong;
  CompareSettings compare;
  RegularizeSettings regularize;
  int output_stride = 1;
  std::uint64_t seed = 0;
  ConfigMap raw;

  double tau() const { return T / K; }
};

// Nodal profile from a preset string such as "cos:0.1:1" or an explicit array.
inline Vec make_profile(const std::string& key, const ConfigValue& val, const Vec& x, double L) {
  const int N = static_cast<int>(x.size());
  if (auto a = std::get_if<std::vector<double>>(&val.v)) {
    if (static_cast<int>(a->size()) != N)
      throw ConfigError(key, "array length " + std::to_string(a->size()) + " differs from N");
    return Eigen::Map<const Vec>(a->data(), N);
  }
  if (auto d = std::get_if<double>(&val.v)) return Vec::Constant(N, *d);
  auto s = std::get_if<std::string>(&val.v);
  if (!s) throw ConfigError(key, "expected a profile string or array");
  std::vector<std::string> parts;
  std::stringstream ss(*s);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(trim(item));
  std::vector<double> a;
  try {
    for (std::size_t i = 1; i < parts.size(); ++i) a.push_back(std::stod(parts[i]));
  } catch (...) {
    throw ConfigError(key, "bad profile parameters in '" + *s + "'");
  }
  auto need = [&](std::size_t n) {
    if (a.size() != n) throw ConfigError(key, "profile '" + parts[0] + "' expects " + std::to_string(n) + " parameters");
  };
  const std::string& kind = parts.empty() ? *s : parts[0];
  Vec out(N);
  for (int i = 0; i < N; ++i) {
    double xi = x[i] / L;
    if (kind == "zero") { need(0); out[i] = 0.0; }
    else if (kind == "const") { need(1); out[i] = a[0]; }
    else if (kind == "cos") { need(2); out[i] = a[0] * std::cos(a[1] * M_PI * xi); }
    else if (kind == "sin") { need(2); out[i] = a[0] * std::sin(a[1] * M_PI * xi); }
    else if (kind == "affine_cos") { need(3); out[i] = a[0] + a[1] * std::cos(a[2] * M_PI * xi); }
    else if (kind == "linear") { need(2); out[i] = a[0] + a[1] * xi; }
    else if (kind == "gauss") { need(3); out[i] = a[0] * std::exp(-sqr((xi - a[1]) / a[2])); }
    else throw ConfigError(key, "unknown profile '" + kind + "'");
  }
  return out;
}

class ConfigReader {
public:
  explicit ConfigReader(const ConfigMap& m) : m_(m) {}

  bool has(const std::string& k) const { return m_.count(k) > 0; }
  const ConfigValue& at(const std::string& k) {
    used_.insert(k);
    return m_.at(k);
  }
  double num(const std::string& k, double dflt) {
    if (!has(k)) return dflt;
    auto d = std::get_if<double>(&at(k).v);
    if (!d) throw ConfigError(k, "expected a number");
    return *d;
  }
  int integer(const std::string& k, int dflt) {
    double d = num(k, dflt);
    if (d != std::floor(d)) throw ConfigError(k, "expected an integer");
    return static_cast<int>(d);
  }
  std::string str(const std::string& k, const std::string& dflt) {
    if (!has(k)) return dflt;
    auto s = std::get_if<std::string>(&at(k).v);
    if (!s) throw ConfigError(k, "expected a string");
    return *s;
  }
  bool boolean(const std::string& k, bool dflt) {
    if (!has(k)) return dflt;
    auto b = std::get_if<bool>(&at(k).v);
    if (!b) throw ConfigError(k, "expected true or false");
    return *b;
  }
  std::vector<double> array(const std::string& k, std::vector<double> dflt) {
    if (!has(k)) return dflt;
    auto a = std::get_if<std::vector<double>>(&at(k).v);
    if (!a) throw ConfigError(k, "expected an array");
    return *a;
  }
  void check_all_used() const {
    for (auto& [k, v] : m_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

private:
  const ConfigMap& m_;
  std::set<std::string> used_;
};

inline TimeFunction read_time_function(ConfigReader& r, const std::string& prefix) {
  TimeFunction f;
  f.kind = r.str(prefix + ".kind", "zero");
  static const std::set<std::string> kinds{"zero", "constant", "linear", "sin", "cos", "table"};
  if (!kinds.count(f.kind)) throw ConfigError(prefix + ".kind", "unknown time function '" + f.kind + "'");
  f.amp = r.num(prefix + ".amp", 0.0);
  f.freq = r.num(prefix + ".freq", 1.0);
  f.phase = r.num(prefix + ".phase", 0.0);
  f.offset = r.num(prefix + ".offset", 0.0);
  f.ts = r.array(prefix + ".t", {});
  f.vs = r.array(prefix + ".v", {});
  if (f.kind == "table") {
    if (f.ts.size() < 2 || f.ts.size() != f.vs.size())
      throw ConfigError(prefix + ".t", "table needs matching t and v arrays of length >= 2");
    for (std::size_t i = 1; i < f.ts.size(); ++i)
      if (!(f.ts[i] > f.ts[i - 1])) throw ConfigError(prefix + ".t", "table times must increase");
  }
  return f;
}

inline ScenarioConfig build_scenario(const ConfigMap& m) {
  ConfigReader r(m);
  ScenarioConfig c;
  c.raw = m;
  c.name = r.str("name", "scenario");
  r.str("mode", "weak"); // consumed by the runner
  c.N = r.integer("mesh.N", 101);
  c.L = r.num("mesh.L", 1.0);
  c.lumped_mass = r.boolean("mesh.lumped_mass", false);
  c.T = r.num("time.T", 1.0);
  c.K = r.integer("time.K", 100);
  if (c.N < 3) throw ConfigError("mesh.N", "need N >= 3");
  if (!(c.L > 0.0)) throw ConfigError("mesh.L", "need L > 0");
  if (!(c.T > 0.0)) throw ConfigError("time.T", "need T > 0");
  if (c.K < 1) throw ConfigError("time.K", "need K >= 1");

  auto& mat = c.material;
  try {
    mat.a = make_law(r.str("material.a", "quadratic_plus"), r.num("material.a_scale", 1.0));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("material.a", e.what());
  }
  try {
    mat.b = make_law(r.str("material.b", "constant"), r.num("material.b_scale", 1.0),
                     r.num("material.b_offset", 0.0));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("material.b", e.what());
  }
  mat.b_floor = r.num("material.b_floor", mat.b.name == "constant" ? mat.b.scale : mat.b.offset);
  mat.C = r.num("material.C", 1.0);
  mat.V = r.num("material.V", 1.0);
  mat.growth_p = r.num("material.p", 1.0);
  mat.growth_q = r.num("material.q", 1.0);
  mat.gamma0 = r.num("material.gamma0", 1.0);
  mat.gamma1 = r.num("material.gamma1", 0.0);
  mat.gamma2 = r.num("material.gamma2", 0.0);
  if (!(mat.C > 0.0)) throw ConfigError("material.C", "need C > 0");
  if (!(mat.V > 0.0)) throw ConfigError("material.V", "need V > 0");
  if (!(mat.b_floor > 0.0)) throw ConfigError("material.b_floor", "need b_floor > 0");
  if (!(mat.gamma0 > 0.0))
    throw ConfigError("material.gamma0", "need gamma0 > 0 (Dirichlet only via large gamma2)");
  if (mat.gamma1 < 0.0 || mat.gamma2 < 0.0) throw ConfigError("material.gamma1", "need gamma_i >= 0");

  std::map<std::string, double> pp;
  for (const char* k : {"ell", "c1", "c2", "c3", "c", "eps_dom"}) {
    std::string key = std::string("potential.") + k;
    if (r.has(key)) pp[k] = r.num(key, 0.0);
  }
  try {
    c.potential = make_potential(r.str("potential.name", "quadratic"), pp);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("potential.name", e.what());
  }

  Mesh1D mesh = build_mesh(c.N, c.L);
  auto profile = [&](const std::string& k, const std::string& dflt) {
    if (!r.has(k)) return make_profile(k, ConfigValue{dflt}, mesh.x, c.L);
    return make_profile(k, r.at(k), mesh.x, c.L);
  };
  c.u0 = profile("initial.u0", "zero");
  c.v0 = profile("initial.v0", "zero");
  c.chi0 = profile("initial.chi0", "const:1");
  for (int i = 0; i < c.N; ++i)
    if (c.chi0[i] < 0.0 || c.chi0[i] > 1.0)
      throw ConfigError("initial.chi0", "chi0 must lie in [0,1] at every node");
  if (c.potential.kind == PotentialKind::Logarithmic)
    for (int i = 0; i < c.N; ++i)
      if (c.chi0[i] <= 0.0 || c.chi0[i] >= 1.0)
        throw ConfigError("initial.chi0", "logarithmic potential needs chi0 in (0,1)");

  c.forcing.profile = profile("forcing.f.profile", "zero");
  c.forcing.theta = read_time_function(r, "forcing.f");
  c.forcing.g0 = read_time_function(r, "forcing.g0");
  c.forcing.gL = read_time_function(r, "forcing.gL");

  auto& t = c.tol;
  t.inner = r.num("solver.tol_inner", t.inner);
  t.lin = r.num("solver.tol_lin", t.lin);
  t.ell = r.num("solver.tol_ell", t.ell);
  t.ode = r.num("solver.tol_ode", t.ode);
  t.mono = r.num("solver.tol_mono", t.mono);
  t.vi = r.num("solver.tol_vi", t.vi);
  t.fista_max = r.integer("solver.fista_max", t.fista_max);
  t.newton_max = r.integer("solver.newton_max", t.newton_max);

  auto& s = c.strong;
  s.n_modes = r.integer("strong.n_modes", s.n_modes);
  s.rung = r.integer("strong.rung", s.rung);
  s.delta = r.num("strong.delta", s.delta);
  s.nu = r.num("strong.nu", s.nu);
  s.steps = r.integer("strong.steps", s.steps);
  s.psi_max = r.num("strong.psi_max", s.psi_max);
  s.record_every = r.integer("strong.record_every", s.record_every);
  if (r.has("strong.varpi0")) {
    auto& v = r.at("strong.varpi0");
    if (auto str = std::get_if<std::string>(&v.v); str && (*str == "zero" || *str == "consistent")) {
      s.varpi0 = *str;
    } else {
      s.varpi0 = "values";
      c.varpi0_values = make_profile("strong.varpi0", v, mesh.x, c.L);
    }
  }
  c.varpi0 = s.varpi0;

  auto& cmp = c.compare;
  cmp.refine = r.integer("compare.refine", cmp.refine);
  cmp.C_REI = r.num("compare.C_REI", cmp.C_REI);
  cmp.calibrate = r.boolean("compare.calibrate", cmp.calibrate);
  cmp.reference = r.str("compare.reference", cmp.reference);
  cmp.perturb = r.str("compare.perturb", cmp.perturb);
  if (cmp.reference != "strong" && cmp.reference != "weak")
    throw ConfigError("compare.reference", "expected \"strong\" or \"weak\"");

  auto& rg = c.regularize;
  rg.graph = r.str("regularize.graph", rg.graph);
  rg.deltas = r.array("regularize.deltas", rg.deltas);
  rg.x_min = r.num("regularize.x_min", rg.x_min);
  rg.x_max = r.num("regularize.x_max", rg.x_max);
  rg.points = r.integer("regularize.points", rg.points);

  c.output_stride = r.integer("output.stride", 1);
  if (c.output_stride < 1) throw ConfigError("output.stride", "need stride >= 1");
  c.seed = static_cast<std::uint64_t>(r.num("seed", 0.0));
  r.check_all_used();
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) { return build_scenario(read_config_file(path)); }

} // namespace dsim
