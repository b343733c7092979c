#pragma once

#include <vector>

#include "safegp/propagate.hpp"
#include "safegp/rewards.hpp"
#include "safegp/safety.hpp"

namespace safegp {

// Episode objective J = R + xi * Q over a predicted trajectory:
//   R = sum_t E[r(x_t)],   Q = prod_t q(x_t),   q(x_t) = P(x_t safe).
// Q is accumulated in log space so long horizons cannot underflow, and its
// per-step partial derivatives are formed as exp of leave-one-out log sums.

inline double episode_return(PredictedTrajectory& traj,
                             const RewardSpec& reward) {
  const int h = traj.horizon();
  if (h == 0) throw ConfigError("episode_return: empty trajectory");
  traj.per_step_reward.resize(h);
  double r = 0.0;
  for (int t = 0; t < h; ++t) {
    const RewardGrad g =
        expected_reward(reward, traj.beliefs[t].mean, traj.beliefs[t].cov);
    traj.per_step_reward[t] = g.value;
    r += g.value;
  }
  return r;
}

namespace detail {

// Product of probabilities with leave-one-out partials, robust to zeros.
struct SafeProduct {
  double q_total = 1.0;
  VectorXd d_q;  // dQ / dq_t

  explicit SafeProduct(const VectorXd& q) {
    const int h = static_cast<int>(q.size());
    d_q = VectorXd::Zero(h);
    int zeros = 0;
    int zero_at = -1;
    double log_sum = 0.0;
    for (int t = 0; t < h; ++t) {
      if (q[t] <= 0.0) {
        ++zeros;
        zero_at = t;
      } else {
        log_sum += std::log(std::min(1.0, q[t]));
      }
    }
    if (zeros == 0) {
      q_total = std::exp(log_sum);
      for (int t = 0; t < h; ++t)
        d_q[t] = std::exp(log_sum - std::log(std::min(1.0, q[t])));
    } else {
      q_total = 0.0;
      if (zeros == 1) d_q[zero_at] = std::exp(log_sum);
    }
  }
};

}  // namespace detail

inline double episode_safety(PredictedTrajectory& traj, const SafetySpec& spec,
                             const RectOptions& opt = {}) {
  const int h = traj.horizon();
  if (h == 0) throw ConfigError("episode_safety: empty trajectory");
  traj.per_step_safe_prob.resize(h);
  for (int t = 0; t < h; ++t)
    traj.per_step_safe_prob[t] = safe_probability(
        spec, traj.beliefs[t].mean, traj.beliefs[t].cov, opt);
  return detail::SafeProduct(traj.per_step_safe_prob).q_total;
}

inline double composite_objective(PredictedTrajectory& traj,
                                  const RewardSpec& reward,
                                  const SafetySpec& spec,
                                  const RectOptions& opt = {}) {
  return episode_return(traj, reward) +
         spec.xi * episode_safety(traj, spec, opt);
}

// Everything a policy evaluation needs besides the parameters.
struct ObjectiveContext {
  const SeSystem* dynamics = nullptr;
  RewardSpec reward;
  const SafetySpec* safety = nullptr;
  Belief init;
  int horizon = 0;
  RectOptions rect;
};

struct ObjectiveEval {
  double J = kNegInf;
  double R = 0.0;
  double Q = 0.0;
  bool diverged = false;
  PredictedTrajectory traj;
};

inline ObjectiveEval evaluate_objective(const ObjectiveContext& ctx,
                                        const Policy& shape,
                                        const VectorXd& theta) {
  Policy p = shape;
  p.unflatten(theta);
  ObjectiveEval out;
  try {
    out.traj = rollout_beliefs(*ctx.dynamics, p, ctx.init, ctx.horizon);
  } catch (const DivergenceError&) {
    out.diverged = true;
    return out;
  }
  out.R = episode_return(out.traj, ctx.reward);
  if (ctx.safety == nullptr) {
    // Unconstrained problem: every state is safe and J reduces to R.
    out.Q = 1.0;
    out.traj.per_step_safe_prob = VectorXd::Ones(out.traj.horizon());
    out.J = out.R;
    return out;
  }
  out.Q = episode_safety(out.traj, *ctx.safety, ctx.rect);
  out.J = out.R + ctx.safety->xi * out.Q;
  return out;
}

struct ObjectiveGradEval {
  double J = kNegInf;
  double R = 0.0;
  double Q = 0.0;
  bool diverged = false;
  VectorXd grad;
};

// J and dJ/dtheta by reverse accumulation through the rollout.  The forward
// pass stores only the per-step beliefs; each step's internals are recomputed
// inside its VJP.
inline ObjectiveGradEval objective_and_gradient(const ObjectiveContext& ctx,
                                                const Policy& shape,
                                                const VectorXd& theta) {
  Policy p = shape;
  p.unflatten(theta);
  const int h = ctx.horizon;
  const int n = static_cast<int>(ctx.init.mean.size());

  ObjectiveGradEval out;
  out.grad = VectorXd::Zero(p.param_count());

  std::vector<Belief> states(h + 1);
  states[0] = ctx.init;
  try {
    for (int t = 1; t <= h; ++t)
      states[t] = belief_step(*ctx.dynamics, p, states[t - 1]);
  } catch (const DivergenceError&) {
    out.diverged = true;
    return out;
  }

  const bool constrained = ctx.safety != nullptr;
  std::vector<RewardGrad> r_heads(h);
  std::vector<SafeProbGrad> q_heads(constrained ? h : 0);
  VectorXd q_vals = VectorXd::Ones(h);
  for (int t = 0; t < h; ++t) {
    r_heads[t] =
        expected_reward(ctx.reward, states[t + 1].mean, states[t + 1].cov);
    if (constrained) {
      q_heads[t] = safe_probability_grad(*ctx.safety, states[t + 1].mean,
                                         states[t + 1].cov, ctx.rect);
      q_vals[t] = q_heads[t].q;
    }
    out.R += r_heads[t].value;
  }
  const detail::SafeProduct sp(q_vals);
  out.Q = sp.q_total;
  const double xi = constrained ? ctx.safety->xi : 0.0;
  out.J = out.R + xi * out.Q;

  VectorXd mean_bar = VectorXd::Zero(n);
  MatrixXd cov_bar = MatrixXd::Zero(n, n);
  for (int t = h; t >= 1; --t) {
    const double qb = constrained ? xi * sp.d_q[t - 1] : 0.0;
    mean_bar += r_heads[t - 1].d_mu;
    cov_bar += r_heads[t - 1].d_sigma;
    if (constrained) {
      mean_bar += qb * q_heads[t - 1].d_mu;
      cov_bar += qb * q_heads[t - 1].d_sigma;
    }
    const StepAdjoint sa =
        belief_step_vjp(*ctx.dynamics, p, states[t - 1], mean_bar, cov_bar);
    out.grad += sa.theta_bar;
    mean_bar = sa.mean_bar;
    cov_bar = sa.cov_bar;
  }
  return out;
}

}  // namespace safegp
