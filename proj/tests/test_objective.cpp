#include <catch2/catch_amalgamated.hpp>

#include "safegp/gp_fit.hpp"
#include "safegp/objective.hpp"
#include "safegp/rng.hpp"

using namespace safegp;
using Catch::Approx;

namespace {

GpModel make_toy_model(int state_dim, int control_dim, int points, Rng& rng,
                       double signal = 1.0, double noise = 1e-4) {
  GpModel gp;
  const int d = state_dim + control_dim;
  gp.X = rng.normal_matrix(points, d);
  gp.Y.resize(points, state_dim);
  for (int i = 0; i < points; ++i)
    for (int a = 0; a < state_dim; ++a)
      gp.Y(i, a) = 0.3 * std::sin(1.3 * gp.X(i, a) + 0.4 * a) +
                   0.2 * gp.X(i, (a + 1) % d);
  gp.hyper.resize(state_dim);
  for (int a = 0; a < state_dim; ++a) {
    gp.hyper[a].lengthscale = VectorXd::Constant(d, 1.2 + 0.1 * a);
    gp.hyper[a].signal_var = signal;
    gp.hyper[a].noise_var = noise;
  }
  gp.refresh();
  return gp;
}

SafetySpec box_safety(double xi = 5.0) {
  SafetySpec s;
  s.root = SafetyNode::all_of(
      {SafetyNode::box(0, -2.0, 2.0), SafetyNode::box(1, -2.0, 2.0)});
  s.xi = xi;
  s.compile(2);
  return s;
}

RewardSpec target_reward() {
  RewardSpec r;
  r.type = RewardType::exponential;
  r.target = (VectorXd(2) << 0.5, 0.0).finished();
  r.weight = MatrixXd::Identity(2, 2);
  return r;
}

}  // namespace

TEST_CASE("episode return sums the per step expected rewards") {
  PredictedTrajectory traj;
  for (double m : {0.1, -0.3, 0.2}) {
    Belief b;
    b.mean = VectorXd::Constant(2, m);
    b.cov = 0.1 * MatrixXd::Identity(2, 2);
    traj.beliefs.push_back(b);
  }
  const RewardSpec r = target_reward();
  const double total = episode_return(traj, r);
  REQUIRE(traj.per_step_reward.size() == 3);
  REQUIRE(total ==
          Approx(traj.per_step_reward.sum()).epsilon(1e-14));
  double manual = 0.0;
  for (const Belief& b : traj.beliefs)
    manual += expected_reward(r, b.mean, b.cov).value;
  REQUIRE(total == Approx(manual).epsilon(1e-14));
}

TEST_CASE("pinned trajectory at the target yields R equal to horizon") {
  PredictedTrajectory traj;
  const RewardSpec r = target_reward();
  for (int t = 0; t < 7; ++t) {
    Belief b;
    b.mean = r.target;
    b.cov = MatrixXd::Zero(2, 2);
    traj.beliefs.push_back(b);
  }
  REQUIRE(episode_return(traj, r) == Approx(7.0).margin(1e-12));
}

TEST_CASE("safe product multiplies and exposes leave one out partials") {
  VectorXd q(3);
  q << 0.99, 0.98, 0.97;
  const detail::SafeProduct sp(q);
  REQUIRE(sp.q_total == Approx(0.99 * 0.98 * 0.97).epsilon(1e-12));
  REQUIRE(sp.q_total == Approx(0.9411).margin(1e-4));
  REQUIRE(sp.d_q[0] == Approx(0.98 * 0.97).epsilon(1e-12));
  REQUIRE(sp.d_q[1] == Approx(0.99 * 0.97).epsilon(1e-12));
  REQUIRE(sp.d_q[2] == Approx(0.99 * 0.98).epsilon(1e-12));

  q << 1.0, 1.0, 1.0;
  REQUIRE(detail::SafeProduct(q).q_total == 1.0);

  q << 0.9, 0.0, 0.8;
  const detail::SafeProduct spz(q);
  REQUIRE(spz.q_total == 0.0);
  REQUIRE(spz.d_q[0] == 0.0);
  REQUIRE(spz.d_q[1] == Approx(0.72).epsilon(1e-12));
  REQUIRE(spz.d_q[2] == 0.0);

  q << 0.9, 0.0, 0.0;
  REQUIRE(detail::SafeProduct(q).d_q.norm() == 0.0);
}

TEST_CASE("long horizons do not underflow the safety product") {
  VectorXd q = VectorXd::Constant(5000, 0.9);
  const detail::SafeProduct sp(q);
  REQUIRE(sp.q_total >= 0.0);
  REQUIRE(std::isfinite(sp.q_total));
  // Tiny but strictly positive: the log-space sum must not flush to zero.
  REQUIRE(sp.q_total > 0.0);
  REQUIRE(std::log(sp.q_total) == Approx(5000 * std::log(0.9)).epsilon(1e-10));
}

TEST_CASE("episode safety factorization matches per step Monte Carlo") {
  Rng rng(606);
  const GpModel gp = make_toy_model(2, 1, 14, rng);
  Policy p = make_rbf_policy(2, 1, 5, VectorXd::Constant(1, 1.0),
                             VectorXd::Zero(2), MatrixXd::Identity(2, 2), rng);
  Belief init;
  init.mean = VectorXd::Zero(2);
  init.cov = 0.05 * MatrixXd::Identity(2, 2);
  PredictedTrajectory traj = rollout_beliefs(gp, p, init, 4);

  SafetySpec spec;
  spec.root = SafetyNode::all_of(
      {SafetyNode::box(0, -1.2, 1.2), SafetyNode::box(1, -1.1, 1.3)});
  spec.compile(2);
  const double q_total = episode_safety(traj, spec);

  double mc_product = 1.0;
  const int samples = 400000;
  for (const Belief& b : traj.beliefs) {
    const Eigen::LLT<MatrixXd> llt(b.cov);
    REQUIRE(llt.info() == Eigen::Success);
    const MatrixXd chol = llt.matrixL();
    int hits = 0;
    for (int i = 0; i < samples; ++i) {
      const VectorXd x = b.mean + chol * rng.normal_vector(2);
      if (spec.is_safe(x)) ++hits;
    }
    mc_product *= static_cast<double>(hits) / samples;
  }
  REQUIRE(q_total == Approx(mc_product).margin(5e-3));
}

TEST_CASE("composite objective is the affine combination") {
  Rng rng(99);
  const GpModel gp = make_toy_model(2, 1, 12, rng);
  Policy p = make_linear_policy(2, 1, VectorXd::Constant(1, 1.0), rng);
  Belief init;
  init.mean = VectorXd::Zero(2);
  init.cov = 0.05 * MatrixXd::Identity(2, 2);

  PredictedTrajectory traj = rollout_beliefs(gp, p, init, 5);
  const RewardSpec reward = target_reward();
  SafetySpec spec = box_safety(10.0);

  PredictedTrajectory t2 = traj;
  const double r = episode_return(t2, reward);
  const double q = episode_safety(t2, spec);
  const double j = composite_objective(traj, reward, spec);
  REQUIRE(j == Approx(r + 10.0 * q).epsilon(1e-12));

  spec.xi = 0.0;
  PredictedTrajectory t3 = t2;
  REQUIRE(composite_objective(t3, reward, spec) == Approx(r).epsilon(1e-12));
}

TEST_CASE("objective gradient matches finite differences") {
  Rng rng(31415);
  const GpModel gp = make_toy_model(2, 1, 12, rng);
  const SeSystem sys = se_system_from_gp(gp);

  ObjectiveContext ctx;
  ctx.dynamics = &sys;
  ctx.reward = target_reward();
  SafetySpec spec = box_safety(3.0);
  ctx.safety = &spec;
  ctx.init.mean = VectorXd::Zero(2);
  ctx.init.cov = 0.05 * MatrixXd::Identity(2, 2);
  ctx.horizon = 5;

  for (const PolicyKind kind : {PolicyKind::linear, PolicyKind::rbf}) {
    Policy shape =
        kind == PolicyKind::linear
            ? make_linear_policy(2, 1, VectorXd::Constant(1, 1.5), rng)
            : make_rbf_policy(2, 1, 4, VectorXd::Constant(1, 1.5),
                              VectorXd::Zero(2), MatrixXd::Identity(2, 2),
                              rng);
    const int reps = kind == PolicyKind::linear ? 5 : 2;
    for (int trial = 0; trial < reps; ++trial) {
      VectorXd theta = shape.flatten();
      theta += 0.3 * rng.normal_vector(theta.size());

      const ObjectiveGradEval g = objective_and_gradient(ctx, shape, theta);
      REQUIRE(!g.diverged);
      REQUIRE(std::isfinite(g.J));

      for (int i = 0; i < theta.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(theta[i]));
        VectorXd tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        const double fd = (evaluate_objective(ctx, shape, tp).J -
                           evaluate_objective(ctx, shape, tm).J) /
                          (2 * h);
        const double scale = std::max(1.0, std::abs(fd));
        REQUIRE(g.grad[i] == Approx(fd).margin(1e-4 * scale));
      }
    }
  }
}

TEST_CASE("objective evaluation is deterministic") {
  Rng rng(8);
  const GpModel gp = make_toy_model(2, 1, 12, rng);
  const SeSystem sys = se_system_from_gp(gp);

  ObjectiveContext ctx;
  ctx.dynamics = &sys;
  ctx.reward = target_reward();
  SafetySpec spec = box_safety(2.0);
  ctx.safety = &spec;
  ctx.init.mean = VectorXd::Zero(2);
  ctx.init.cov = 0.05 * MatrixXd::Identity(2, 2);
  ctx.horizon = 6;

  Policy shape = make_rbf_policy(2, 1, 4, VectorXd::Constant(1, 1.0),
                                 VectorXd::Zero(2), MatrixXd::Identity(2, 2),
                                 rng);
  const VectorXd theta = shape.flatten();
  const ObjectiveGradEval a = objective_and_gradient(ctx, shape, theta);
  const ObjectiveGradEval b = objective_and_gradient(ctx, shape, theta);
  REQUIRE(a.J == b.J);
  REQUIRE(a.R == b.R);
  REQUIRE(a.Q == b.Q);
  REQUIRE((a.grad - b.grad).norm() == 0.0);
}

TEST_CASE("zero safety weight reduces the gradient to the return gradient") {
  Rng rng(21);
  const GpModel gp = make_toy_model(2, 1, 12, rng);
  const SeSystem sys = se_system_from_gp(gp);

  ObjectiveContext ctx;
  ctx.dynamics = &sys;
  ctx.reward = target_reward();
  SafetySpec spec = box_safety(1.0);
  spec.xi = 0.0;
  ctx.safety = &spec;
  ctx.init.mean = VectorXd::Zero(2);
  ctx.init.cov = 0.05 * MatrixXd::Identity(2, 2);
  ctx.horizon = 4;

  Policy shape = make_linear_policy(2, 1, VectorXd::Constant(1, 1.0), rng);
  const VectorXd theta = shape.flatten();
  const ObjectiveGradEval g = objective_and_gradient(ctx, shape, theta);
  REQUIRE(g.J == Approx(g.R).epsilon(1e-12));

  for (int i = 0; i < theta.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(theta[i]));
    VectorXd tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (evaluate_objective(ctx, shape, tp).R -
                       evaluate_objective(ctx, shape, tm).R) /
                      (2 * h);
    REQUIRE(g.grad[i] == Approx(fd).margin(1e-6 * std::max(1.0, std::abs(fd))));
  }
}

TEST_CASE("diverging rollout returns the sentinel") {
  Rng rng(13);
  GpModel gp = make_toy_model(2, 1, 8, rng, /*signal=*/5e6, /*noise=*/1.0);
  const SeSystem sys = se_system_from_gp(gp);

  ObjectiveContext ctx;
  ctx.dynamics = &sys;
  ctx.reward = target_reward();
  SafetySpec spec = box_safety(1.0);
  ctx.safety = &spec;
  ctx.init.mean = VectorXd::Zero(2);
  ctx.init.cov = 0.01 * MatrixXd::Identity(2, 2);
  ctx.horizon = 5;

  Policy shape = make_linear_policy(2, 1, VectorXd::Constant(1, 1.0), rng);
  const ObjectiveGradEval g =
      objective_and_gradient(ctx, shape, shape.flatten());
  REQUIRE(g.diverged);
  REQUIRE(g.J == kNegInf);
  REQUIRE(g.grad.norm() == 0.0);

  const ObjectiveEval e = evaluate_objective(ctx, shape, shape.flatten());
  REQUIRE(e.diverged);
  REQUIRE(e.J == kNegInf);
}
