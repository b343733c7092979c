#include <catch2/catch_amalgamated.hpp>

#include "safegp/rewards.hpp"
#include "safegp/rng.hpp"

using namespace safegp;
using Catch::Approx;

namespace {

double mc_exponential(const VectorXd& mu, const MatrixXd& sigma,
                      const VectorXd& target, const MatrixXd& w, int n,
                      Rng& rng) {
  const Eigen::LLT<MatrixXd> llt(sigma);
  REQUIRE(llt.info() == Eigen::Success);
  const MatrixXd chol = llt.matrixL();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const VectorXd x = mu + chol * rng.normal_vector(mu.size());
    const VectorXd d = x - target;
    acc += std::exp(-0.5 * d.dot(w * d));
  }
  return acc / n;
}

}  // namespace

TEST_CASE("exponential reward at target with zero covariance is 1") {
  VectorXd mu(2);
  mu << 0.3, -1.2;
  const MatrixXd sigma = MatrixXd::Zero(2, 2);
  MatrixXd w(2, 2);
  w << 2.0, 0.3, 0.3, 1.0;
  const RewardGrad g = expected_exponential_reward(mu, sigma, mu, w);
  REQUIRE(g.value == Approx(1.0).margin(1e-12));
}

TEST_CASE("exponential reward with zero covariance reduces to the integrand") {
  VectorXd mu(2), target(2);
  mu << 0.5, -0.25;
  target << -0.1, 0.4;
  MatrixXd w(2, 2);
  w << 1.5, -0.2, -0.2, 0.8;
  const MatrixXd sigma = MatrixXd::Zero(2, 2);
  const RewardGrad g = expected_exponential_reward(mu, sigma, target, w);
  const VectorXd d = mu - target;
  REQUIRE(g.value == Approx(std::exp(-0.5 * d.dot(w * d))).epsilon(1e-12));
}

TEST_CASE("scalar exponential reward matches the closed form") {
  // One dimension: E[exp(-0.5 w (x-t)^2)] with x ~ N(m, s)
  // = exp(-0.5 w (m-t)^2 / (1 + s w)) / sqrt(1 + s w).
  VectorXd mu(1), target(1);
  mu << 1.2;
  target << 0.4;
  MatrixXd sigma(1, 1), w(1, 1);
  sigma << 0.35;
  w << 2.0;
  const RewardGrad g = expected_exponential_reward(mu, sigma, target, w);
  const double s = sigma(0, 0), ww = w(0, 0), d = mu[0] - target[0];
  const double expect =
      std::exp(-0.5 * ww * d * d / (1.0 + s * ww)) / std::sqrt(1.0 + s * ww);
  REQUIRE(g.value == Approx(expect).epsilon(1e-12));
}

TEST_CASE("exponential reward frozen two dimensional value") {
  // Unit weights on both dims, unit variance, mean one unit off target in
  // each coordinate: value = (exp(-1/4)/sqrt(2))^2 applied per dim.
  VectorXd mu(2), target(2);
  mu << 1.0, -1.0;
  target << 0.0, 0.0;
  const MatrixXd sigma = MatrixXd::Identity(2, 2);
  const MatrixXd w = MatrixXd::Identity(2, 2);
  const RewardGrad g = expected_exponential_reward(mu, sigma, target, w);
  const double per_dim = std::exp(-0.25) / std::sqrt(2.0);
  REQUIRE(g.value == Approx(per_dim * per_dim).epsilon(1e-12));
  REQUIRE(g.value == Approx(0.30327).margin(1e-5));
}

TEST_CASE("scalar exponential reward frozen value with Monte Carlo check") {
  VectorXd mu(1), target(1);
  mu << 1.0;
  target << 0.0;
  MatrixXd sigma(1, 1), w(1, 1);
  sigma << 0.5;
  w << 1.0;
  const RewardGrad g = expected_exponential_reward(mu, sigma, target, w);
  REQUIRE(g.value == Approx(0.5852).margin(1e-3));
  Rng rng(17);
  const double mc = mc_exponential(mu, sigma, target, w, 2000000, rng);
  REQUIRE(g.value == Approx(mc).margin(1e-3));
}

TEST_CASE("exponential reward agrees with Monte Carlo") {
  Rng rng(991);
  VectorXd mu(3), target(3);
  mu << 0.4, -0.6, 1.1;
  target << 0.0, 0.2, 0.9;
  MatrixXd a = MatrixXd::Zero(3, 3);
  a << 0.9, 0.1, 0.0, -0.2, 0.7, 0.3, 0.1, 0.0, 0.8;
  const MatrixXd sigma = a * a.transpose() + 0.05 * MatrixXd::Identity(3, 3);
  MatrixXd wroot(3, 3);
  wroot << 1.0, 0.0, 0.0, 0.4, 0.8, 0.0, -0.1, 0.2, 0.0;
  const MatrixXd w = wroot * wroot.transpose();  // singular on purpose
  const RewardGrad g = expected_exponential_reward(mu, sigma, target, w);
  const double mc = mc_exponential(mu, sigma, target, w, 400000, rng);
  REQUIRE(g.value == Approx(mc).epsilon(5e-3));
}

TEST_CASE("exponential reward gradients match finite differences") {
  VectorXd mu(3), target(3);
  mu << 0.4, -0.6, 1.1;
  target << 0.0, 0.2, 0.9;
  MatrixXd a(3, 3);
  a << 0.9, 0.1, 0.0, -0.2, 0.7, 0.3, 0.1, 0.0, 0.8;
  MatrixXd sigma = a * a.transpose() + 0.05 * MatrixXd::Identity(3, 3);
  MatrixXd w(3, 3);
  w << 1.2, 0.3, -0.1, 0.3, 0.9, 0.2, -0.1, 0.2, 0.7;

  const RewardGrad g = expected_exponential_reward(mu, sigma, target, w);
  const double h = 1e-6;

  for (int i = 0; i < 3; ++i) {
    VectorXd mp = mu, mm = mu;
    mp[i] += h;
    mm[i] -= h;
    const double fd = (expected_exponential_reward(mp, sigma, target, w).value -
                       expected_exponential_reward(mm, sigma, target, w).value) /
                      (2 * h);
    REQUIRE(g.d_mu[i] == Approx(fd).margin(1e-7));
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      MatrixXd sp = sigma, sm = sigma;
      sp(i, j) += h;
      sm(i, j) -= h;
      const double fd =
          (expected_exponential_reward(mu, sp, target, w).value -
           expected_exponential_reward(mu, sm, target, w).value) /
          (2 * h);
      REQUIRE(g.d_sigma(i, j) == Approx(fd).margin(1e-7));
    }
  }
}

TEST_CASE("linear reward is exact and gradient free of covariance") {
  VectorXd mu(2);
  mu << 2.0, -3.0;
  MatrixXd sigma(2, 2);
  sigma << 1.0, 0.2, 0.2, 0.5;
  VectorXd coeff(2);
  coeff << 0.1, -0.4;
  const RewardGrad g = expected_linear_reward(mu, sigma, coeff);
  REQUIRE(g.value == Approx(0.1 * 2.0 + (-0.4) * (-3.0)).epsilon(1e-14));
  REQUIRE(g.d_mu.isApprox(coeff));
  REQUIRE(g.d_sigma.norm() == 0.0);
}

TEST_CASE("reward spec dispatch") {
  VectorXd mu(2);
  mu << 0.2, 0.1;
  MatrixXd sigma = 0.1 * MatrixXd::Identity(2, 2);

  RewardSpec exp_spec;
  exp_spec.type = RewardType::exponential;
  exp_spec.target = VectorXd::Zero(2);
  exp_spec.weight = MatrixXd::Identity(2, 2);
  const RewardGrad ge = expected_reward(exp_spec, mu, sigma);
  const RewardGrad direct = expected_exponential_reward(
      mu, sigma, exp_spec.target, exp_spec.weight);
  REQUIRE(ge.value == Approx(direct.value).epsilon(1e-14));

  RewardSpec lin_spec;
  lin_spec.type = RewardType::linear;
  lin_spec.direction = VectorXd::Zero(2);
  lin_spec.direction[0] = 0.1;
  const RewardGrad gl = expected_reward(lin_spec, mu, sigma);
  REQUIRE(gl.value == Approx(0.02).epsilon(1e-14));
}
