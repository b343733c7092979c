#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace safegp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Numerical failure that carries enough context to diagnose the offending
// matrix (what we tried, which jitters were attempted).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Predicted state distribution blew up during a rollout.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input (config files, CLI arguments, malformed checkpoints).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Every optimization start failed; carries diagnostics about the attempts.
struct OptimizationError : std::runtime_error {
  explicit OptimizationError(const std::string& msg)
      : std::runtime_error(msg) {}
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

inline bool all_finite(const Eigen::Ref<const MatrixXd>& a) {
  return a.allFinite();
}

inline MatrixXd symmetrize(const MatrixXd& a) {
  return 0.5 * (a + a.transpose());
}

// Cholesky with an escalating jitter ladder.  Returns the factor L (lower) of
// a + jitter*I for the first jitter in {0, 1e-10, 1e-8, 1e-6} * mean(diag)
// that succeeds, else throws NumericalError listing what was tried.
inline MatrixXd robust_cholesky(const MatrixXd& a, const char* what = "matrix") {
  const double scale = a.rows() > 0 ? a.diagonal().mean() : 1.0;
  const double ladder[] = {0.0, 1e-10, 1e-8, 1e-6};
  std::string tried;
  for (double mult : ladder) {
    const double jitter = mult * (scale > 0 ? scale : 1.0);
    MatrixXd aj = a;
    aj.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(aj);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    if (!tried.empty()) tried += ", ";
    tried += std::to_string(jitter);
  }
  throw NumericalError(std::string("cholesky failed for ") + what +
                       " (size " + std::to_string(a.rows()) +
                       ", jitters tried: " + tried + ")");
}

}  // namespace safegp
