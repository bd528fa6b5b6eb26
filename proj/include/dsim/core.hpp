#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dsim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Raised when an iterative solve fails to reach its tolerance.
class SolverError : public std::runtime_error {
public:
  explicit SolverError(const std::string& what, int step = -1)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

private:
  int step_;
};

// Malformed or inconsistent configuration; carries the offending key.
class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

private:
  std::string key_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline double sqr(double x) { return x * x; }

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

} // namespace dsim
