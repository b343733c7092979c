#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "safegp/env.hpp"
#include "safegp/gp_fit.hpp"
#include "safegp/objective.hpp"
#include "safegp/optimize_policy.hpp"

namespace safegp {

// Episodic model-based training: fit a dynamics model on executed episodes,
// improve the policy against the model's predicted rollout, gate deployment
// on predicted constraint risk, and execute only policies that pass.
//
// Time runs on two grids.  The simulator advances in its own ticks; the
// planner sees every SUBS-th tick, and each planner-step control is held for
// SUBS simulator steps.  All recorded states are planner-grid observations.

// random/learned/blocked form the training stream; eval marks held-out
// policy evaluations that never feed the model.
enum class EpisodeKind { random, learned, blocked, eval };

inline const char* to_string(EpisodeKind k) {
  switch (k) {
    case EpisodeKind::random: return "random";
    case EpisodeKind::learned: return "learned";
    case EpisodeKind::blocked: return "blocked";
    default: return "eval";
  }
}

struct EpisodeRecord {
  EpisodeKind kind = EpisodeKind::random;
  MatrixXd states;          // (T+1) x n, planner-grid observations (0 x n if
                            // the policy was blocked and never executed)
  MatrixXd controls;        // T x m held controls
  VectorXd native_rewards;  // T, simulator reward summed per hold window
  bool violated = false;
  int violation_step = -1;  // planner step of the first violation
  bool reached_terminal = false;
  Policy policy;            // snapshot that produced the episode
  double xi = 0.0;          // trade-off weight active when produced
  double predicted_risk = 0.0;  // 1 - predicted Q of the policy, if gated

  int steps() const { return static_cast<int>(controls.rows()); }
  double native_return() const {
    return native_rewards.size() ? native_rewards.sum() : 0.0;
  }
};

struct RunConfig {
  std::string env_name;
  VectorXd obs_noise_std;   // empty = keep the environment default
  int J_init_rollouts = 1;  // random episodes before the first fit
  int N_episodes = 1;       // training iterations
  int H = 10;               // planner steps per episode
  int SUBS = 1;             // simulator steps per planner step
  VectorXd mu0;             // initial belief for planning, observed space
  MatrixXd Sigma0;

  RewardSpec reward;

  bool has_safety = false;
  SafetyNode constraint;
  double epsilon = 0.05;
  double xi_init = 30.0;
  double xi_up = 2.0;
  double xi_down = 0.7;
  double xi_min = 1e-2;
  double conservative_fraction = 0.25;
  int max_gate_retries = 5;

  std::string policy_kind = "rbf";
  int n_basis = 25;
  int maxiter = 50;   // policy optimizer iterations per start
  int restarts = 3;   // policy optimizer starts

  int fit_restarts = 3;
  int fit_maxiter = 100;
  bool fixed_noise = false;
  double fixed_noise_var = 1e-4;
  bool normalize_data = true;

  int eval_repeats = 5;
  int max_points = 0;  // if > 0, keep only the newest transitions for the fit
  uint64_t seed = 0;

  void validate(int state_dim, int control_dim) const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (J_init_rollouts < 1) fail("J_init_rollouts must be >= 1");
    if (N_episodes < 0) fail("N_episodes must be >= 0");
    if (H < 1) fail("H must be >= 1");
    if (SUBS < 1) fail("SUBS must be >= 1");
    if (mu0.size() != state_dim)
      fail("mu0 needs " + std::to_string(state_dim) + " entries");
    if (Sigma0.rows() != state_dim || Sigma0.cols() != state_dim)
      fail("Sigma0 must be " + std::to_string(state_dim) + "x" +
           std::to_string(state_dim));
    if (!(epsilon > 0.0 && epsilon < 1.0)) fail("epsilon must be in (0, 1)");
    if (!(xi_init > 0.0)) fail("xi_init must be positive");
    if (!(xi_up > 1.0)) fail("xi_up must exceed 1");
    if (!(xi_down > 0.0 && xi_down <= 1.0)) fail("xi_down must be in (0, 1]");
    if (!(xi_min > 0.0)) fail("xi_min must be positive");
    if (!(conservative_fraction > 0.0 && conservative_fraction < 1.0))
      fail("conservative_fraction must be in (0, 1)");
    if (max_gate_retries < 0) fail("max_gate_retries must be >= 0");
    if (policy_kind != "rbf" && policy_kind != "linear")
      fail("policy must be rbf or linear, got '" + policy_kind + "'");
    if (policy_kind == "rbf" && n_basis < 1) fail("n_basis must be >= 1");
    if (maxiter < 1) fail("maxiter must be >= 1");
    if (restarts < 1) fail("restarts must be >= 1");
    if (fit_restarts < 1) fail("fit restarts must be >= 1");
    if (fit_maxiter < 1) fail("fit maxiter must be >= 1");
    if (fixed_noise && !(fixed_noise_var > 0.0))
      fail("fixed noise variance must be positive");
    if (eval_repeats < 0) fail("eval_repeats must be >= 0");
    if (max_points < 0) fail("max_points must be >= 0");
    if (reward.type == RewardType::exponential &&
        reward.target.size() != state_dim)
      fail("reward target needs " + std::to_string(state_dim) + " entries");
    if (reward.type == RewardType::linear &&
        reward.direction.size() != state_dim)
      fail("reward direction needs " + std::to_string(state_dim) + " entries");
    (void)control_dim;
  }
};

struct TrainingState {
  GpModel model;
  Policy policy;
  std::optional<SafetySpec> safety;  // xi is updated in place by the gate
  std::vector<EpisodeRecord> episodes;
  int violations_total = 0;
  int blocked_total = 0;
};

// One gate evaluation.  Risk above epsilon blocks deployment and raises xi;
// risk comfortably below epsilon relaxes xi toward its floor.
struct GateOutcome {
  bool deploy = true;
  double risk = 0.0;
  double xi_before = 0.0;
  double xi_after = 0.0;
};

inline GateOutcome safety_gate(double q_pred, const RunConfig& c, double xi) {
  GateOutcome g;
  g.risk = 1.0 - q_pred;
  g.xi_before = xi;
  if (g.risk > c.epsilon) {
    g.deploy = false;
    g.xi_after = xi * c.xi_up;
  } else if (g.risk <= c.conservative_fraction * c.epsilon) {
    g.deploy = true;
    g.xi_after = std::max(xi * c.xi_down, c.xi_min);
  } else {
    g.deploy = true;
    g.xi_after = xi;
  }
  return g;
}

// Runs one episode: H planner steps, each control held for SUBS simulator
// steps.  Stops early at a terminal state or on a real constraint violation,
// recording the observation where the run ended.
template <typename Controller>
EpisodeRecord execute_episode(Environment& env, Controller&& controller, int H,
                              int SUBS, Rng& rng, EpisodeKind kind) {
  const int n = env.spec().state_dim;
  const int m = env.spec().control_dim;
  MatrixXd states(H + 1, n), controls(H, m);
  VectorXd rewards = VectorXd::Zero(H);
  VectorXd obs = env.reset(rng);
  states.row(0) = obs.transpose();

  EpisodeRecord rec;
  rec.kind = kind;
  int t = 0;
  while (t < H) {
    const VectorXd u = controller(obs);
    controls.row(t) = u.transpose();
    bool stop = false;
    for (int s = 0; s < SUBS; ++s) {
      const StepResult r = env.step(u, rng);
      rewards[t] += r.reward;
      obs = r.obs;
      if (!r.safe) {
        rec.violated = true;
        rec.violation_step = t;
        stop = true;
        break;
      }
      if (r.terminal) {
        rec.reached_terminal = true;
        stop = true;
        break;
      }
    }
    states.row(t + 1) = obs.transpose();
    ++t;
    if (stop) break;
  }
  rec.states = states.topRows(t + 1);
  rec.controls = controls.topRows(t);
  rec.native_rewards = rewards.head(t);
  return rec;
}

// Exploration episodes with controls drawn uniformly from the actuator
// bounds.  Violations are recorded (and end the episode) but never gated.
inline std::vector<EpisodeRecord> collect_random_rollouts(Environment& env,
                                                          const RunConfig& c,
                                                          Rng& rng) {
  std::vector<EpisodeRecord> out;
  out.reserve(c.J_init_rollouts);
  for (int j = 0; j < c.J_init_rollouts; ++j) {
    auto controller = [&](const VectorXd&) {
      VectorXd u(env.spec().control_dim);
      for (int d = 0; d < u.size(); ++d)
        u[d] =
            rng.uniform(env.spec().control_min[d], env.spec().control_max[d]);
      return u;
    };
    out.push_back(
        execute_episode(env, controller, c.H, c.SUBS, rng, EpisodeKind::random));
  }
  return out;
}

// Adds an episode's planner-grid transitions to the model dataset: inputs
// (x_t, u_t), targets x_{t+1} - x_t.  Returns the number of rows added.
inline int append_episode_data(GpModel& model, const EpisodeRecord& rec) {
  const int T = rec.steps();
  if (T == 0) return 0;
  const int n = static_cast<int>(rec.states.cols());
  const int m = static_cast<int>(rec.controls.cols());
  MatrixXd x(T, n + m), y(T, n);
  for (int t = 0; t < T; ++t) {
    x.row(t).head(n) = rec.states.row(t);
    x.row(t).tail(m) = rec.controls.row(t);
    y.row(t) = rec.states.row(t + 1) - rec.states.row(t);
  }
  if (model.X.rows() == 0) {
    model.X = x;
    model.Y = y;
  } else {
    model.append(x, y);
  }
  return T;
}

inline FitOptions fit_options_from(const RunConfig& c) {
  FitOptions f;
  f.restarts = c.fit_restarts;
  f.max_iters = c.fit_maxiter;
  f.fixed_noise = c.fixed_noise;
  f.fixed_noise_var = c.fixed_noise_var;
  f.standardize = c.normalize_data;
  // Weak prior with mode 10 (in units of input std).  Irrelevant inputs have
  // a flat likelihood in their lengthscale; this parks them at a finite,
  // moderate value instead of letting the optimizer run off to overflow,
  // while barely moving well-identified lengthscales.
  f.lengthscale_prior = {2.0, 0.1};
  return f;
}

inline Policy make_policy(const RunConfig& c, const EnvSpec& es, Rng& rng) {
  const VectorXd amp = 0.5 * (es.control_max - es.control_min);
  Policy p;
  if (c.policy_kind == "linear") {
    p = make_linear_policy(es.state_dim, es.control_dim, amp, rng);
  } else {
    p = make_rbf_policy(es.state_dim, es.control_dim, c.n_basis, amp, c.mu0,
                        c.Sigma0, rng);
  }
  p.u_mid = 0.5 * (es.control_max + es.control_min);
  return p;
}

struct IterationOutcome {
  bool deployed = false;
  int blocked = 0;            // rejections before deployment (or giving up)
  double J_pred = kNegInf;    // predicted objective of the accepted policy
  double R_pred = 0.0;
  double Q_pred = 1.0;
  double predicted_risk = 0.0;
  double xi_used = 0.0;       // trade-off weight the accepted policy was
                              // optimized under
  int transitions_added = 0;
};

// One training iteration: improve the policy against the current model, gate
// it, re-optimize under a raised xi after each rejection (bounded retries),
// then execute, log, and refit on the new data.
inline IterationOutcome training_iteration(
    TrainingState& st, const RunConfig& c, Environment& env, Rng& rng,
    const std::function<void(const EpisodeRecord&)>& sink = {}) {
  IterationOutcome out;
  const SeSystem sys = se_system_from_gp(st.model);
  ObjectiveContext ctx;
  ctx.dynamics = &sys;
  ctx.reward = c.reward;
  ctx.safety = st.safety ? &*st.safety : nullptr;
  ctx.init.mean = c.mu0;
  ctx.init.cov = c.Sigma0;
  ctx.horizon = c.H;

  const int attempts = st.safety ? 1 + c.max_gate_retries : 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    const double xi_now = st.safety ? st.safety->xi : 0.0;
    const OptimizationReport rep =
        improve_policy(st.policy, ctx, c.maxiter, c.restarts, rng);
    st.policy.unflatten(rep.theta_opt);

    if (st.safety) {
      const GateOutcome g = safety_gate(rep.Q_opt, c, st.safety->xi);
      st.safety->xi = g.xi_after;
      if (!g.deploy) {
        EpisodeRecord blocked;
        blocked.kind = EpisodeKind::blocked;
        blocked.states.resize(0, env.spec().state_dim);
        blocked.controls.resize(0, env.spec().control_dim);
        blocked.native_rewards.resize(0);
        blocked.policy = st.policy;
        blocked.xi = xi_now;
        blocked.predicted_risk = g.risk;
        st.episodes.push_back(std::move(blocked));
        if (sink) sink(st.episodes.back());
        ++st.blocked_total;
        ++out.blocked;
        continue;  // re-optimize from the rejected optimum under raised xi
      }
      if (g.risk > c.epsilon)
        throw NumericalError("gate invariant broken: deploying above epsilon");
      out.predicted_risk = g.risk;
    }

    out.deployed = true;
    out.J_pred = rep.J_opt;
    out.R_pred = rep.R_opt;
    out.Q_pred = st.safety ? rep.Q_opt : 1.0;
    out.xi_used = xi_now;

    EpisodeRecord ep = execute_episode(
        env, [&](const VectorXd& obs) { return st.policy.act(obs); }, c.H,
        c.SUBS, rng, EpisodeKind::learned);
    ep.policy = st.policy;
    ep.xi = xi_now;
    ep.predicted_risk = out.predicted_risk;
    if (ep.violated) ++st.violations_total;
    out.transitions_added = append_episode_data(st.model, ep);
    st.episodes.push_back(std::move(ep));
    if (sink) sink(st.episodes.back());
    if (c.max_points > 0 && st.model.X.rows() > c.max_points) {
      st.model.X = st.model.X.bottomRows(c.max_points).eval();
      st.model.Y = st.model.Y.bottomRows(c.max_points).eval();
    }
    fit_model(st.model, fit_options_from(c), rng, true);
    return out;
  }
  return out;  // every attempt was blocked; the model is unchanged
}

struct IterationStats {
  bool deployed = false;
  int blocked = 0;
  double J_pred = kNegInf;
  double R_pred = 0.0;
  double Q_pred = 1.0;
  double predicted_risk = 0.0;
  double xi_used = 0.0;
  double train_return = 0.0;   // executed training episode (0 if none)
  bool train_violated = false;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
};

struct RunResult {
  std::vector<EpisodeRecord> episodes;  // training order: random then looped
  std::vector<std::vector<EpisodeRecord>> evals;  // per iteration
  std::vector<IterationStats> iterations;
  GpModel model;
  Policy policy;
  double xi_final = 0.0;
  int violations_total = 0;
  int blocked_total = 0;
};

// Full experiment: random exploration, initial fit, then N gated
// improve-deploy-refit iterations.  Everything is driven by the seed; two
// runs with the same config produce identical results.
inline RunResult run_experiment(
    const RunConfig& c,
    const std::function<void(const EpisodeRecord&)>& sink = {}) {
  auto env = make_environment(c.env_name);
  c.validate(env->spec().state_dim, env->spec().control_dim);
  if (c.obs_noise_std.size()) env->set_obs_noise(c.obs_noise_std);
  Rng rng(c.seed);

  TrainingState st;
  if (c.has_safety) {
    SafetySpec spec;
    spec.root = c.constraint;
    spec.epsilon = c.epsilon;
    spec.xi = c.xi_init;
    spec.compile(env->spec().state_dim);
    st.safety = std::move(spec);
    env->attach_safety(&*st.safety);
  }

  RunResult res;
  for (EpisodeRecord& r : collect_random_rollouts(*env, c, rng)) {
    if (r.violated) ++st.violations_total;
    append_episode_data(st.model, r);
    st.episodes.push_back(std::move(r));
    if (sink) sink(st.episodes.back());
  }
  if (st.model.X.rows() < 2)
    throw NumericalError("random rollouts produced fewer than 2 transitions");
  fit_model(st.model, fit_options_from(c), rng, false);
  st.policy = make_policy(c, env->spec(), rng);

  for (int it = 0; it < c.N_episodes; ++it) {
    const IterationOutcome io = training_iteration(st, c, *env, rng, sink);

    IterationStats stats;
    stats.deployed = io.deployed;
    stats.blocked = io.blocked;
    stats.J_pred = io.J_pred;
    stats.R_pred = io.R_pred;
    stats.Q_pred = io.Q_pred;
    stats.predicted_risk = io.predicted_risk;
    stats.xi_used = io.xi_used;
    if (io.deployed) {
      const EpisodeRecord& last = st.episodes.back();
      stats.train_return = last.native_return();
      stats.train_violated = last.violated;
    }

    // Held-out evaluation of the current policy; these episodes never feed
    // the model and use their own rng substream.
    std::vector<EpisodeRecord> evals;
    Rng eval_rng = rng.split(0xE7A10000ull + static_cast<uint64_t>(it));
    for (int r = 0; r < c.eval_repeats; ++r) {
      auto eval_env = env->clone();
      evals.push_back(execute_episode(
          *eval_env, [&](const VectorXd& obs) { return st.policy.act(obs); },
          c.H, c.SUBS, eval_rng, EpisodeKind::eval));
      evals.back().policy = st.policy;
      evals.back().xi = io.xi_used;
      evals.back().predicted_risk = io.predicted_risk;
      if (sink) sink(evals.back());
    }
    if (!evals.empty()) {
      double mean = 0.0;
      for (const EpisodeRecord& e : evals) mean += e.native_return();
      mean /= static_cast<double>(evals.size());
      double var = 0.0;
      for (const EpisodeRecord& e : evals)
        var += std::pow(e.native_return() - mean, 2);
      var = evals.size() > 1 ? var / static_cast<double>(evals.size() - 1) : 0.0;
      stats.eval_return_mean = mean;
      stats.eval_return_std = std::sqrt(var);
    }
    res.evals.push_back(std::move(evals));
    res.iterations.push_back(stats);
  }

  res.episodes = std::move(st.episodes);
  res.model = std::move(st.model);
  res.policy = std::move(st.policy);
  res.xi_final = st.safety ? st.safety->xi : 0.0;
  res.violations_total = st.violations_total;
  res.blocked_total = st.blocked_total;
  return res;
}

}  // namespace safegp
