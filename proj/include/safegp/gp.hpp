#pragma once

#include <vector>

#include "safegp/common.hpp"

namespace safegp {

// Squared-exponential ARD hyperparameters in raw data units.
struct GpHyper {
  VectorXd lengthscale;  // per input dimension, > 0
  double signal_var = 1.0;
  double noise_var = 0.01;
};

// Gram matrix K_ij = s * exp(-0.5 * sum_d ((x_id - x_jd) / ell_d)^2).
inline MatrixXd se_gram(const MatrixXd& X, const VectorXd& lengthscale,
                        double signal_var) {
  const MatrixXd Z = X * lengthscale.cwiseInverse().asDiagonal();
  const VectorXd sq = Z.rowwise().squaredNorm();
  MatrixXd d2 = (-2.0 * Z * Z.transpose());
  d2.colwise() += sq;
  d2.rowwise() += sq.transpose();
  return signal_var * (-0.5 * d2.array().max(0.0)).exp();
}

// Cross-covariances k(x_*, x_i) for a single query point.
inline VectorXd se_cross(const MatrixXd& X, const VectorXd& lengthscale,
                         double signal_var, const VectorXd& x) {
  const VectorXd inv_l = lengthscale.cwiseInverse();
  VectorXd k(X.rows());
  for (int i = 0; i < X.rows(); ++i) {
    const VectorXd d = (X.row(i).transpose() - x).cwiseProduct(inv_l);
    k[i] = signal_var * std::exp(-0.5 * d.squaredNorm());
  }
  return k;
}

struct PointPrediction {
  VectorXd mean;
  VectorXd var;  // includes process noise
};

// Multi-output GP over shared inputs; one independent SE-ARD GP per output.
// Targets are one-step state deltas.  Caches the per-output inverse Gram and
// weight vector; call refresh() after changing data or hyperparameters.
struct GpModel {
  MatrixXd X;  // N x D
  MatrixXd Y;  // N x E
  std::vector<GpHyper> hyper;

  std::vector<MatrixXd> w_inv;   // (K_a + noise_a I)^-1
  std::vector<VectorXd> alpha;   // w_inv * y_a

  int n() const { return static_cast<int>(X.rows()); }
  int input_dim() const { return static_cast<int>(X.cols()); }
  int output_dim() const { return static_cast<int>(Y.cols()); }

  void refresh() {
    const int e = output_dim();
    w_inv.assign(e, MatrixXd());
    alpha.assign(e, VectorXd());
    for (int a = 0; a < e; ++a) {
      MatrixXd kn = se_gram(X, hyper[a].lengthscale, hyper[a].signal_var);
      kn.diagonal().array() += hyper[a].noise_var;
      const MatrixXd L = robust_cholesky(kn, "gp gram matrix");
      const MatrixXd eye = MatrixXd::Identity(n(), n());
      const MatrixXd linv =
          L.triangularView<Eigen::Lower>().solve(eye);
      w_inv[a] = linv.transpose() * linv;
      alpha[a] = w_inv[a] * Y.col(a);
    }
  }

  void append(const MatrixXd& x_new, const MatrixXd& y_new) {
    const long old_n = X.rows();
    X.conservativeResize(old_n + x_new.rows(), Eigen::NoChange);
    Y.conservativeResize(old_n + y_new.rows(), Eigen::NoChange);
    X.bottomRows(x_new.rows()) = x_new;
    Y.bottomRows(y_new.rows()) = y_new;
  }

  PointPrediction predict_point(const VectorXd& x) const {
    const int e = output_dim();
    PointPrediction out;
    out.mean.resize(e);
    out.var.resize(e);
    for (int a = 0; a < e; ++a) {
      const VectorXd k =
          se_cross(X, hyper[a].lengthscale, hyper[a].signal_var, x);
      out.mean[a] = k.dot(alpha[a]);
      const double v =
          hyper[a].signal_var - k.dot(w_inv[a] * k) + hyper[a].noise_var;
      out.var[a] = std::max(v, 0.0);
    }
    return out;
  }
};

}  // namespace safegp
