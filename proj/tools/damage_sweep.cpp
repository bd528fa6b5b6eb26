// Runs damage_sim once per config, at most DAMAGE_SIM_THREADS at a time.
#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

int thread_cap() {
  const char* e = std::getenv("DAMAGE_SIM_THREADS");
  int n = e ? std::atoi(e) : 0;
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel scenario sweep"};
  std::vector<std::string> configs;
  std::string mode, out = "sweep_out";
  std::string sim = (fs::canonical("/proc/self/exe").parent_path() / "damage_sim").string();
  app.add_option("configs", configs, "scenario files")->required();
  app.add_option("--mode", mode, "passed through to damage_sim");
  app.add_option("--out", out, "root output directory; one subdirectory per config");
  app.add_option("--sim", sim, "damage_sim executable");
  CLI11_PARSE(app, argc, argv);

  std::vector<int> status(configs.size(), 1);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < configs.size();) {
      std::string dir = (fs::path(out) / fs::path(configs[i]).stem()).string();
      std::string cmd = quote(sim) + " --config " + quote(configs[i]) + " --out " + quote(dir);
      if (!mode.empty()) cmd += " --mode " + quote(mode);
      cmd += " > " + quote(dir + ".log") + " 2>&1";
      fs::create_directories(out);
      int rc = std::system(cmd.c_str());
      status[i] = (rc != -1 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : 1;
      std::lock_guard<std::mutex> lk(io);
      std::printf("%-40s exit %d\n", configs[i].c_str(), status[i]);
    }
  };
  int n = std::min<int>(thread_cap(), static_cast<int>(configs.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return *std::max_element(status.begin(), status.end());
}
