#include <catch2/catch_amalgamated.hpp>

#include "safegp/gp_fit.hpp"
#include "safegp/propagate.hpp"
#include "safegp/rng.hpp"

using namespace safegp;
using Catch::Approx;

namespace {

// Small GP dynamics model on random smooth data: state_dim outputs,
// state_dim + control_dim inputs.
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

Belief make_belief(const VectorXd& mu, const MatrixXd& cov) {
  Belief b;
  b.mean = mu;
  b.cov = cov;
  return b;
}

}  // namespace

TEST_CASE("one training point reproduces the inflated kernel integral") {
  // E[k(z, x1)] under z ~ N(mu, s) has the closed form
  // sf2 * sqrt(l2 / (l2 + s)) * exp(-(mu - x1)^2 / (2 (l2 + s))).
  GpModel gp;
  gp.X.resize(1, 1);
  gp.X << 0.7;
  gp.Y.resize(1, 1);
  gp.Y << 0.5;
  gp.hyper.resize(1);
  gp.hyper[0].lengthscale = VectorXd::Constant(1, 0.9);
  gp.hyper[0].signal_var = 1.3;
  gp.hyper[0].noise_var = 0.01;
  gp.refresh();

  const SeSystem sys = se_system_from_gp(gp);
  VectorXd mu(1);
  mu << 0.2;
  MatrixXd s(1, 1);
  s << 0.3;
  const MomentMatch mm = se_moment_match(sys, mu, s);

  const double l2 = 0.9 * 0.9;
  const double expected_k = 1.3 * std::sqrt(l2 / (l2 + 0.3)) *
                            std::exp(-0.25 / (2.0 * (l2 + 0.3)));
  const double alpha1 = gp.alpha[0][0];
  REQUIRE(mm.mean[0] == Approx(alpha1 * expected_k).epsilon(1e-10));
}

TEST_CASE("zero input covariance equals the point prediction plus delta") {
  Rng rng(31);
  const GpModel gp = make_toy_model(2, 1, 14, rng);
  const SeSystem sys = se_system_from_gp(gp);

  Policy p = make_linear_policy(2, 1, VectorXd::Constant(1, 2.0), rng);
  VectorXd mu(2);
  mu << 0.3, -0.4;
  const Belief b = make_belief(mu, MatrixXd::Zero(2, 2));

  const Belief next = belief_step(sys, p, b);

  VectorXd z(3);
  z.head(2) = mu;
  z.tail(1) = p.act(mu);
  const PointPrediction pt = gp.predict_point(z);

  REQUIRE((next.mean - (mu + pt.mean)).norm() < 1e-9);
  REQUIRE(next.cov(0, 0) == Approx(pt.var[0]).margin(1e-9));
  REQUIRE(next.cov(1, 1) == Approx(pt.var[1]).margin(1e-9));
  REQUIRE(std::abs(next.cov(0, 1)) < 1e-6);
}

TEST_CASE("joint assembly carries the policy moments") {
  Rng rng(77);
  Policy p = make_linear_policy(3, 2, VectorXd::Constant(2, 1.5), rng);
  VectorXd mu = rng.normal_vector(3);
  MatrixXd a = rng.normal_matrix(3, 3);
  MatrixXd sigma = a * a.transpose() + 0.2 * MatrixXd::Identity(3, 3);

  const JointStateControl j = join_state_control(make_belief(mu, sigma), p);
  const ControlMoments cm = policy_moments(p, mu, sigma);
  REQUIRE(j.mean.head(3).isApprox(mu));
  REQUIRE(j.mean.tail(2).isApprox(cm.mean));
  REQUIRE(j.cov.topLeftCorner(3, 3).isApprox(sigma));
  REQUIRE(j.cov.topRightCorner(3, 2).isApprox(cm.cross));
  REQUIRE(j.cov.bottomLeftCorner(2, 3).isApprox(cm.cross.transpose()));
  REQUIRE(j.cov.bottomRightCorner(2, 2).isApprox(cm.cov));
}

TEST_CASE("single step rollout equals the composed step") {
  Rng rng(5);
  const GpModel gp = make_toy_model(2, 1, 12, rng);
  Policy p = make_rbf_policy(2, 1, 5, VectorXd::Constant(1, 1.0),
                             VectorXd::Zero(2), MatrixXd::Identity(2, 2), rng);
  const Belief init =
      make_belief(VectorXd::Zero(2), 0.05 * MatrixXd::Identity(2, 2));

  const PredictedTrajectory traj = rollout_beliefs(gp, p, init, 1);
  const Belief direct = belief_step(se_system_from_gp(gp), p, init);
  REQUIRE(traj.horizon() == 1);
  REQUIRE(traj.beliefs[0].mean.isApprox(direct.mean));
  REQUIRE(traj.beliefs[0].cov.isApprox(direct.cov));
}

TEST_CASE("rollout beliefs stay symmetric and PSD") {
  Rng rng(111);
  const GpModel gp = make_toy_model(2, 1, 16, rng);
  Policy p = make_rbf_policy(2, 1, 6, VectorXd::Constant(1, 1.0),
                             VectorXd::Zero(2), MatrixXd::Identity(2, 2), rng);
  const Belief init =
      make_belief(VectorXd::Zero(2), 0.02 * MatrixXd::Identity(2, 2));

  const PredictedTrajectory traj = rollout_beliefs(gp, p, init, 15);
  REQUIRE(traj.horizon() == 15);
  for (const Belief& b : traj.beliefs) {
    REQUIRE((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::SelfAdjointEigenSolver<MatrixXd> es(b.cov);
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-9);
    REQUIRE(std::isfinite(b.cov.trace()));
  }
}

TEST_CASE("learned linear system tracks the exact linear Gaussian recursion") {
  // Deterministic linear plant x' = A x + B u with a weakly squashed linear
  // policy; the GP is trained densely on exact deltas, so predicted means
  // should follow the closed-form recursion closely for 10 steps.
  Rng rng(424242);
  MatrixXd a(2, 2), bmat(2, 1);
  a << 0.9, 0.1, 0.0, 0.8;
  bmat << 0.0, 0.1;
  Eigen::RowVector2d k(-0.5, -0.3);

  GpModel gp;
  const int pts = 120;
  gp.X.resize(pts, 3);
  gp.Y.resize(pts, 2);
  for (int i = 0; i < pts; ++i) {
    const VectorXd x = rng.normal_vector(2) * 0.5;
    const double u = rng.normal() * 0.3;
    gp.X(i, 0) = x[0];
    gp.X(i, 1) = x[1];
    gp.X(i, 2) = u;
    const VectorXd nx = a * x + bmat * VectorXd::Constant(1, u);
    gp.Y(i, 0) = nx[0] - x[0];
    gp.Y(i, 1) = nx[1] - x[1];
  }
  FitOptions fopt;
  fopt.fixed_noise = true;
  fopt.fixed_noise_var = 1e-8;
  fopt.restarts = 2;
  fit_model(gp, fopt, rng);
  gp.refresh();

  Policy p = make_linear_policy(2, 1, VectorXd::Constant(1, 10.0), rng);
  p.theta_mat = k;
  p.bias.setZero();

  const Belief init = make_belief((VectorXd(2) << 0.5, -0.3).finished(),
                                  1e-4 * MatrixXd::Identity(2, 2));
  const PredictedTrajectory traj =
      rollout_beliefs(gp, p, init, 10);

  const MatrixXd closed = a + bmat * k;
  VectorXd mu = init.mean;
  for (int t = 0; t < 10; ++t) {
    mu = closed * mu;
    REQUIRE((traj.beliefs[t].mean - mu).norm() < 1e-3);
  }
}

TEST_CASE("divergent model raises a divergence error") {
  Rng rng(13);
  GpModel gp = make_toy_model(1, 1, 8, rng, /*signal=*/5e6, /*noise=*/1.0);
  Policy p = make_linear_policy(1, 1, VectorXd::Constant(1, 1.0), rng);
  const Belief init =
      make_belief(VectorXd::Zero(1), 0.01 * MatrixXd::Identity(1, 1));
  REQUIRE_THROWS_AS(rollout_beliefs(gp, p, init, 5), DivergenceError);
}

TEST_CASE("dimension mismatches are rejected") {
  Rng rng(3);
  const GpModel gp = make_toy_model(2, 1, 10, rng);
  const SeSystem sys = se_system_from_gp(gp);
  Policy p = make_linear_policy(2, 2, VectorXd::Constant(2, 1.0), rng);
  const Belief b =
      make_belief(VectorXd::Zero(2), 0.1 * MatrixXd::Identity(2, 2));
  REQUIRE_THROWS_AS(belief_step(sys, p, b), ConfigError);
}

TEST_CASE("belief step adjoints match finite differences") {
  Rng rng(2718);
  const GpModel gp = make_toy_model(2, 1, 12, rng);
  const SeSystem sys = se_system_from_gp(gp);

  for (const PolicyKind kind : {PolicyKind::linear, PolicyKind::rbf}) {
    Policy p =
        kind == PolicyKind::linear
            ? make_linear_policy(2, 1, VectorXd::Constant(1, 1.5), rng)
            : make_rbf_policy(2, 1, 4, VectorXd::Constant(1, 1.5),
                              VectorXd::Zero(2), MatrixXd::Identity(2, 2),
                              rng);

    VectorXd mu(2);
    mu << 0.25, -0.4;
    MatrixXd sa = rng.normal_matrix(2, 2);
    MatrixXd sigma = 0.5 * sa * sa.transpose() +
                     0.1 * MatrixXd::Identity(2, 2);
    const Belief b = make_belief(mu, sigma);

    const VectorXd mean_bar = rng.normal_vector(2);
    const MatrixXd cov_bar = rng.normal_matrix(2, 2);

    const auto scalar = [&](const Policy& pol, const Belief& bb) {
      const Belief nb = belief_step(sys, pol, bb);
      return mean_bar.dot(nb.mean) + (cov_bar.array() * nb.cov.array()).sum();
    };

    const StepAdjoint adj = belief_step_vjp(sys, p, b, mean_bar, cov_bar);
    const double h = 1e-6;

    for (int i = 0; i < 2; ++i) {
      Belief bp = b, bm = b;
      bp.mean[i] += h;
      bm.mean[i] -= h;
      const double fd = (scalar(p, bp) - scalar(p, bm)) / (2 * h);
      REQUIRE(adj.mean_bar[i] == Approx(fd).margin(2e-6));
    }
    for (int i = 0; i < 2; ++i) {
      for (int jj = 0; jj < 2; ++jj) {
        Belief bp = b, bm = b;
        bp.cov(i, jj) += h;
        bm.cov(i, jj) -= h;
        const double fd = (scalar(p, bp) - scalar(p, bm)) / (2 * h);
        REQUIRE(adj.cov_bar(i, jj) == Approx(fd).margin(2e-6));
      }
    }
    const VectorXd theta = p.flatten();
    for (int i = 0; i < theta.size(); ++i) {
      VectorXd tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      Policy pp = p, pm = p;
      pp.unflatten(tp);
      pm.unflatten(tm);
      const double fd = (scalar(pp, b) - scalar(pm, b)) / (2 * h);
      REQUIRE(adj.theta_bar[i] == Approx(fd).margin(5e-6));
    }
  }
}
