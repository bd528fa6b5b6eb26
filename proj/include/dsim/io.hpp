#pragma once

#include "diagnostics.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace dsim {

using json = nlohmann::json;

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

/// Column-major CSV; all columns must have equal length.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& cols) {
  require(header.size() == cols.size(), "write_csv: header/column mismatch");
  std::size_t n = cols.empty() ? 0 : cols[0].size();
  for (const auto& c : cols) require(c.size() == n, "write_csv: ragged columns");
  std::ostringstream os;
  for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << header[j];
  os << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) os << (j ? "," : "") << fmt_num(cols[j][i]);
    os << "\n";
  }
  write_text(path, os.str());
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> cols;

  const std::vector<double>& col(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return cols[j];
    throw std::out_of_range("no column " + name);
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(f, line)) return t;
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  t.cols.resize(t.header.size());
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::size_t j = 0;
    for (std::string cell; std::getline(ls, cell, ','); ++j) {
      require(j < t.cols.size(), "read_csv: too many cells in " + path);
      t.cols[j].push_back(std::stod(cell));
    }
  }
  return t;
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline json vec_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(fmt_num(x)));
  return a;
}

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return json::parse(f);
}

inline constexpr int kSchemaVersion = 1;

struct RunManifest {
  std::string name, mode, config_hash, canonical_config;
  std::uint64_t seed = 0;
  int exit_status = 0;
  std::vector<std::string> files; // relative to the output directory

  json to_json(const std::string& dir) const {
    json inv = json::array();
    for (const auto& f : files)
      inv.push_back({{"path", f}, {"bytes", std::filesystem::file_size(dir + "/" + f)}});
    return {{"schema_version", kSchemaVersion}, {"name", name}, {"mode", mode},
            {"config_hash", config_hash}, {"seed", seed}, {"config", canonical_config},
            {"exit_status", exit_status}, {"files", inv}};
  }
};

inline json energy_report_json(const EnergyReport& r) {
  return {{"edi_min_slack", r.min_edi()}, {"edi_tolerance", r.tol_edi}, {"edi_passed", r.edi_passed()},
          {"uedi_min_slack", r.min_uedi()}, {"uedi_tolerance", r.tol_uedi},
          {"uedi_passed", r.uedi_passed()}, {"first_violation_step", r.first_edi_violation()},
          {"infeasible", r.infeasible}, {"infeasible_steps", r.infeasible_steps}};
}

inline void write_energy_csv(const std::string& path, const EnergyReport& r) {
  write_csv(path, {"t", "E", "D", "D_cum", "work", "edi_slack", "uedi_D_cum", "uedi_work", "uedi_slack"},
            {r.t, r.E, r.D, r.D_cum, r.work, r.edi_slack, r.uedi_D_cum, r.uedi_work, r.uedi_slack});
}

inline void write_relative_csv(const std::string& path, const RelativeReport& r) {
  write_csv(path, {"t", "R", "W", "W_cum", "coupling", "K", "int_K", "lhs", "rhs", "slack"},
            {r.t, r.R, r.W, r.W_cum, r.coupling, r.K, r.intK, r.lhs, r.rhs, r.slack});
}

/// times.csv plus one snapshot file per stored state.
inline std::vector<std::string> write_snapshots(const std::string& dir, const Mesh1D& mesh,
                                                const std::vector<SimState>& states,
                                                const std::vector<int>& steps) {
  std::vector<std::string> files;
  std::vector<double> t, k;
  for (std::size_t j = 0; j < states.size(); ++j) {
    char name[64];
    std::snprintf(name, sizeof name, "snapshot_%06zu.csv", j);
    write_csv(dir + "/" + name, {"x", "u", "v", "chi"},
              {to_std(mesh.x), to_std(states[j].u), to_std(states[j].v), to_std(states[j].chi)});
    files.push_back(name);
    t.push_back(states[j].t);
    k.push_back(j < steps.size() ? steps[j] : static_cast<double>(j));
  }
  write_csv(dir + "/times.csv", {"index", "step", "t"}, {[&] {
              std::vector<double> i(t.size());
              for (std::size_t j = 0; j < i.size(); ++j) i[j] = static_cast<double>(j);
              return i;
            }(), k, t});
  files.push_back("times.csv");
  return files;
}

inline std::vector<SimState> read_snapshots(const std::string& dir) {
  CsvTable times = read_csv(dir + "/times.csv");
  std::vector<SimState> out;
  const auto& t = times.col("t");
  for (std::size_t j = 0; j < t.size(); ++j) {
    char name[64];
    std::snprintf(name, sizeof name, "/snapshot_%06zu.csv", j);
    CsvTable s = read_csv(dir + name);
    SimState st;
    st.t = t[j];
    auto load = [&](const char* c) {
      const auto& v = s.col(c);
      return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    st.u = load("u");
    st.v = load("v");
    st.chi = load("chi");
    st.chi_prev = st.chi;
    out.push_back(std::move(st));
  }
  return out;
}

} // namespace dsim
