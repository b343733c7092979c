#pragma once

#include <vector>

#include "safegp/moment_match.hpp"
#include "safegp/policy.hpp"

namespace safegp {

// One planning step: form the joint Gaussian over (state, control) from the
// policy, push it through the dynamics model by moment matching (the model
// predicts state deltas), and re-add the state.  A rollout iterates the step.

inline constexpr double kDivergenceTrace = 1e6;
inline constexpr double kPsdTolerance = 1e-9;

struct Belief {
  VectorXd mean;
  MatrixXd cov;
};

struct JointStateControl {
  int state_dim = 0;
  int control_dim = 0;
  VectorXd mean;  // n + m
  MatrixXd cov;   // (n + m) x (n + m); top-right block is Cov(x, u)
};

struct PredictedTrajectory {
  std::vector<Belief> beliefs;   // H entries, the first is one step from init
  VectorXd per_step_reward;      // filled by the objective layer
  VectorXd per_step_safe_prob;   // filled by the objective layer
  int horizon() const { return static_cast<int>(beliefs.size()); }
};

inline JointStateControl join_state_control(const Belief& b, const Policy& p) {
  if (p.state_dim != b.mean.size())
    throw ConfigError("join_state_control: policy expects state of " +
                      std::to_string(p.state_dim) + " dims, belief has " +
                      std::to_string(b.mean.size()));
  const int n = p.state_dim, m = p.control_dim;
  const ControlMoments cm = policy_moments(p, b.mean, b.cov);
  JointStateControl j;
  j.state_dim = n;
  j.control_dim = m;
  j.mean.resize(n + m);
  j.mean.head(n) = b.mean;
  j.mean.tail(m) = cm.mean;
  j.cov.resize(n + m, n + m);
  j.cov.topLeftCorner(n, n) = b.cov;
  j.cov.topRightCorner(n, m) = cm.cross;
  j.cov.bottomLeftCorner(m, n) = cm.cross.transpose();
  j.cov.bottomRightCorner(m, m) = cm.cov;
  return j;
}

namespace detail {

// Clip eigenvalues in [-tol, 0) to zero; below -tol the matrix is treated as
// genuinely indefinite.  Identity on PSD input, so gradients pass through.
inline void enforce_psd(MatrixXd& c) {
  const Eigen::SelfAdjointEigenSolver<MatrixXd> es(c);
  const double lo = es.eigenvalues().minCoeff();
  if (lo >= 0.0) return;
  if (lo < -kPsdTolerance)
    throw DivergenceError("belief covariance indefinite: min eigenvalue " +
                          std::to_string(lo));
  const VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
  c = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
}

inline void check_dims(const SeSystem& sys, int n, int m) {
  if (sys.outputs() != n)
    throw ConfigError("dynamics model predicts " +
                      std::to_string(sys.outputs()) + " outputs, state has " +
                      std::to_string(n) + " dims");
  if (sys.X->cols() != n + m)
    throw ConfigError("dynamics model inputs have " +
                      std::to_string(sys.X->cols()) + " dims, expected " +
                      std::to_string(n + m) + " (state + control)");
}

}  // namespace detail

inline Belief moment_match_step(const SeSystem& sys,
                                const JointStateControl& j) {
  const int n = j.state_dim;
  detail::check_dims(sys, n, j.control_dim);
  const MomentMatch mm = se_moment_match(sys, j.mean, j.cov);
  Belief next;
  next.mean = j.mean.head(n) + mm.mean;
  const MatrixXd cx = mm.cross.topRows(n);  // Cov(x, delta)
  next.cov = symmetrize(j.cov.topLeftCorner(n, n) + mm.cov + cx +
                        cx.transpose());
  if (!all_finite(next.mean) || !all_finite(next.cov))
    throw DivergenceError("belief propagation produced non-finite moments");
  if (next.cov.trace() > kDivergenceTrace)
    throw DivergenceError("belief covariance trace " +
                          std::to_string(next.cov.trace()) +
                          " exceeds divergence bound");
  detail::enforce_psd(next.cov);
  return next;
}

inline Belief belief_step(const SeSystem& sys, const Policy& p,
                          const Belief& b) {
  return moment_match_step(sys, join_state_control(b, p));
}

inline PredictedTrajectory rollout_beliefs(const SeSystem& sys,
                                           const Policy& p, const Belief& init,
                                           int horizon) {
  if (horizon < 1) throw ConfigError("rollout horizon must be >= 1");
  PredictedTrajectory traj;
  traj.beliefs.reserve(horizon);
  Belief b = init;
  for (int t = 0; t < horizon; ++t) {
    b = belief_step(sys, p, b);
    traj.beliefs.push_back(b);
  }
  return traj;
}

inline PredictedTrajectory rollout_beliefs(const GpModel& gp, const Policy& p,
                                           const Belief& init, int horizon) {
  const SeSystem sys = se_system_from_gp(gp);
  return rollout_beliefs(sys, p, init, horizon);
}

// Reverse-mode sensitivities of one belief step.  Recomputes the forward
// intermediates from the input belief, then walks the chain backwards:
// symmetrized output covariance -> moment matching over the joint -> joint
// assembly -> policy moments.  The eigenvalue clip is treated as identity
// (it is, away from the PSD boundary).
struct StepAdjoint {
  VectorXd mean_bar;
  MatrixXd cov_bar;
  VectorXd theta_bar;
};

inline StepAdjoint belief_step_vjp(const SeSystem& sys, const Policy& p,
                                   const Belief& b,
                                   const VectorXd& next_mean_bar,
                                   const MatrixXd& next_cov_bar) {
  const int n = p.state_dim, m = p.control_dim;
  detail::check_dims(sys, n, m);
  const JointStateControl j = join_state_control(b, p);

  const MatrixXd presym_bar = symmetrize(next_cov_bar);

  // next.mean = x_mean + mm.mean; next.cov = sym(x_cov + mm.cov + cx + cx').
  StepAdjoint out;
  out.mean_bar = next_mean_bar;
  out.cov_bar = presym_bar;

  MatrixXd cross_bar = MatrixXd::Zero(n + m, n);
  cross_bar.topRows(n) = 2.0 * presym_bar;

  const SeAdjoints adj = se_moment_match_vjp(sys, j.mean, j.cov, next_mean_bar,
                                             presym_bar, cross_bar);

  out.mean_bar += adj.m_bar.head(n);
  out.cov_bar += adj.S_bar.topLeftCorner(n, n);

  const VectorXd u_mean_bar = adj.m_bar.tail(m);
  const MatrixXd u_cov_bar = adj.S_bar.bottomRightCorner(m, m);
  const MatrixXd u_cross_bar =
      adj.S_bar.topRightCorner(n, m) +
      adj.S_bar.bottomLeftCorner(m, n).transpose();

  const PolicyMomentsAdjoint padj =
      policy_moments_vjp(p, b.mean, b.cov, u_mean_bar, u_cov_bar, u_cross_bar);
  out.mean_bar += padj.mu_bar;
  out.cov_bar += padj.sigma_bar;
  out.theta_bar = padj.theta_bar;
  return out;
}

}  // namespace safegp
