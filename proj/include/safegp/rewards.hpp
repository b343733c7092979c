#pragma once

#include "safegp/common.hpp"

namespace safegp {

// Expected rewards of Gaussian state distributions, with gradients in the
// distribution parameters (full-matrix convention for the covariance).

struct RewardGrad {
  double value = 0.0;
  VectorXd d_mu;
  MatrixXd d_sigma;
};

enum class RewardType { exponential, linear };

struct RewardSpec {
  RewardType type = RewardType::exponential;
  // Exponential: r(x) = exp(-0.5 (x - target)' W (x - target)).
  VectorXd target;
  MatrixXd weight;  // W, positive semidefinite
  // Linear: r(x) = direction' x.
  VectorXd direction;
};

// E[r] for the exponential reward under N(mu, Sigma):
//   |I + Sigma W|^{-1/2} exp(-0.5 d' W (I + Sigma W)^{-1} d), d = mu - target.
// Exact for Gaussians; reduces to r(mu) at Sigma = 0.
inline RewardGrad expected_exponential_reward(const VectorXd& mu,
                                              const MatrixXd& sigma,
                                              const VectorXd& target,
                                              const MatrixXd& weight) {
  const int n = static_cast<int>(mu.size());
  const VectorXd d = mu - target;
  MatrixXd iw = MatrixXd::Identity(n, n);
  iw.noalias() += sigma * weight;
  Eigen::PartialPivLU<MatrixXd> lu(iw);
  const double det = lu.determinant();
  if (!(det > 0.0))
    throw NumericalError("expected reward: non-positive |I + Sigma W|");
  const MatrixXd wt = weight * lu.inverse();  // W (I + Sigma W)^{-1}
  const double quad = d.dot(wt * d);
  RewardGrad out;
  out.value = std::exp(-0.5 * quad) / std::sqrt(det);
  out.d_mu = -0.5 * out.value * (wt + wt.transpose()) * d;
  const VectorXd wtd = wt * d;
  const VectorXd wttd = wt.transpose() * d;
  out.d_sigma = out.value *
                (-0.5 * wt.transpose() + 0.5 * wttd * wtd.transpose());
  return out;
}

inline RewardGrad expected_linear_reward(const VectorXd& mu,
                                         const MatrixXd& sigma,
                                         const VectorXd& direction) {
  RewardGrad out;
  out.value = direction.dot(mu);
  out.d_mu = direction;
  out.d_sigma = MatrixXd::Zero(sigma.rows(), sigma.cols());
  return out;
}

inline RewardGrad expected_reward(const RewardSpec& spec, const VectorXd& mu,
                                  const MatrixXd& sigma) {
  if (spec.type == RewardType::exponential)
    return expected_exponential_reward(mu, sigma, spec.target, spec.weight);
  return expected_linear_reward(mu, sigma, spec.direction);
}

}  // namespace safegp
