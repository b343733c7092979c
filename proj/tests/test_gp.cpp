#include <catch2/catch_amalgamated.hpp>

#include "safegp/gp.hpp"
#include "safegp/gp_fit.hpp"
#include "safegp/rng.hpp"

using namespace safegp;
using Catch::Approx;

namespace {

// Dense multivariate normal log density, the independent NLML oracle.
double mvn_logpdf_zero_mean(const VectorXd& y, const MatrixXd& cov) {
  const int n = static_cast<int>(y.size());
  const Eigen::LLT<MatrixXd> llt(cov);
  const MatrixXd l = llt.matrixL();
  const VectorXd z = l.triangularView<Eigen::Lower>().solve(y);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(l(i, i));
  return -0.5 * z.squaredNorm() - logdet - 0.5 * n * kLog2Pi;
}

}  // namespace

TEST_CASE("kernel reference values and symmetry") {
  MatrixXd x(2, 1);
  x << 0.0, 2.0;
  VectorXd ell = VectorXd::Ones(1);
  const MatrixXd k = se_gram(x, ell, 1.0);
  CHECK(k(0, 0) == Approx(1.0).epsilon(1e-14));
  CHECK(k(1, 1) == Approx(1.0).epsilon(1e-14));
  // Distance 2 with unit lengthscale: exp(-2).
  CHECK(k(0, 1) == Approx(0.1353352832366127).epsilon(1e-12));
  CHECK(k(0, 1) == k(1, 0));
}

TEST_CASE("gram matrix is positive semidefinite for random inputs") {
  Rng rng(11);
  const MatrixXd x = rng.normal_matrix(40, 3);
  VectorXd ell(3);
  ell << 0.5, 1.5, 2.0;
  MatrixXd k = se_gram(x, ell, 2.0);
  const Eigen::SelfAdjointEigenSolver<MatrixXd> es(k);
  CHECK(es.eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("nlml matches a dense gaussian log density") {
  Rng rng(17);
  const MatrixXd x = rng.normal_matrix(7, 2);
  const VectorXd y = rng.normal_vector(7);
  VectorXd p(4);
  p << std::log(0.8), std::log(1.3), 0.5 * std::log(1.7),
      0.5 * std::log(0.05);
  FitOptions opt;
  const auto t = detail::nlml_and_grad(x, y, p, opt, 0.0);
  const VectorXd ell = p.head(2).array().exp();
  const double s = std::exp(2.0 * p[2]);
  const double noise = opt.noise_floor * s + std::exp(2.0 * p[3]);
  MatrixXd kn = se_gram(x, ell, s);
  kn.diagonal().array() += noise;
  CHECK(t.value == Approx(-mvn_logpdf_zero_mean(y, kn)).epsilon(1e-10));
}

TEST_CASE("single zero observation with unit marginal variance") {
  MatrixXd x(1, 1);
  x << 0.0;
  VectorXd y(1);
  y << 0.0;
  // signal 0.5, noise 0.5 => marginal variance 1, nlml = 0.5 log(2 pi).
  VectorXd p(3);
  p << 0.0, 0.5 * std::log(0.5), 0.5 * std::log(0.5 - 1e-6 * 0.5);
  FitOptions opt;
  const auto t = detail::nlml_and_grad(x, y, p, opt, 0.0);
  CHECK(t.value == Approx(0.9189385332046727).epsilon(1e-9));
}

TEST_CASE("nlml is invariant to permuting the data") {
  Rng rng(23);
  const int n = 12;
  MatrixXd x = rng.normal_matrix(n, 2);
  VectorXd y = rng.normal_vector(n);
  MatrixXd xp = x;
  VectorXd yp = y;
  // Reverse order.
  for (int i = 0; i < n; ++i) {
    xp.row(i) = x.row(n - 1 - i);
    yp[i] = y[n - 1 - i];
  }
  VectorXd p(4);
  p << 0.2, -0.1, 0.3, -1.0;
  FitOptions opt;
  const auto a = detail::nlml_and_grad(x, y, p, opt, 0.0);
  const auto b = detail::nlml_and_grad(xp, yp, p, opt, 0.0);
  CHECK(a.value == Approx(b.value).margin(1e-10));
}

TEST_CASE("nlml gradient agrees with finite differences") {
  Rng rng(31);
  const MatrixXd x = rng.normal_matrix(10, 3);
  const VectorXd y = rng.normal_vector(10);
  FitOptions opt;
  opt.lengthscale_prior = {2.0, 1.0};
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd p = 0.4 * rng.normal_vector(5);
    const auto t = detail::nlml_and_grad(x, y, p, opt, 0.0);
    const double h = 1e-6;
    for (int j = 0; j < 5; ++j) {
      VectorXd pp = p, pm = p;
      pp[j] += h;
      pm[j] -= h;
      const double fd =
          (detail::nlml_and_grad(x, y, pp, opt, 0.0).value -
           detail::nlml_and_grad(x, y, pm, opt, 0.0).value) /
          (2 * h);
      CHECK(t.grad[j] == Approx(fd).margin(1e-5 * (1.0 + std::abs(fd))));
    }
  }
}

TEST_CASE("fixed-noise nlml gradient agrees with finite differences") {
  Rng rng(37);
  const MatrixXd x = rng.normal_matrix(8, 2);
  const VectorXd y = rng.normal_vector(8);
  FitOptions opt;
  opt.fixed_noise = true;
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd p = 0.4 * rng.normal_vector(3);
    const auto t = detail::nlml_and_grad(x, y, p, opt, 0.04);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      VectorXd pp = p, pm = p;
      pp[j] += h;
      pm[j] -= h;
      const double fd =
          (detail::nlml_and_grad(x, y, pp, opt, 0.04).value -
           detail::nlml_and_grad(x, y, pm, opt, 0.04).value) /
          (2 * h);
      CHECK(t.grad[j] == Approx(fd).margin(1e-5 * (1.0 + std::abs(fd))));
    }
  }
}

TEST_CASE("fit recovers the lengthscale of sampled data within a factor 2") {
  Rng rng(41);
  const int n = 50;
  MatrixXd x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = rng.uniform(-3.0, 3.0);
  MatrixXd k = se_gram(x, VectorXd::Ones(1), 1.0);
  k.diagonal().array() += 1e-9;
  const MatrixXd l = robust_cholesky(k);
  VectorXd y = l * rng.normal_vector(n);
  for (int i = 0; i < n; ++i) y[i] += 0.1 * rng.normal();

  GpHyper h;
  FitOptions opt;
  Rng fit_rng(1);
  fit_gp_output(x, y, opt, fit_rng, h);
  CHECK(h.lengthscale[0] > 0.5);
  CHECK(h.lengthscale[0] < 2.0);
  CHECK(h.noise_var >= opt.noise_floor * h.signal_var * (1.0 - 1e-12));
}

TEST_CASE("fixed noise is returned exactly and never optimized") {
  Rng rng(43);
  MatrixXd x = rng.normal_matrix(20, 2);
  VectorXd y = x.col(0).array().sin();
  FitOptions opt;
  opt.fixed_noise = true;
  opt.fixed_noise_var = 0.0123;
  GpHyper h;
  Rng fit_rng(2);
  fit_gp_output(x, y, opt, fit_rng, h);
  CHECK(h.noise_var == 0.0123);  // bitwise, not approximate
  CHECK(h.signal_var <= opt.fixed_noise_var / opt.noise_floor * (1 + 1e-12));
}

TEST_CASE("lengthscale prior pulls the optimum") {
  // Two nearly colinear targets leave the lengthscale weakly identified;
  // a sharp prior should dominate.
  Rng rng(47);
  MatrixXd x = rng.normal_matrix(15, 1);
  VectorXd y = 0.5 * x.col(0);
  FitOptions no_prior;
  FitOptions with_prior;
  with_prior.lengthscale_prior = {60.0, 30.0};  // mode near 2 in fit space
  GpHyper h0, h1;
  Rng r0(3), r1(3);
  fit_gp_output(x, y, no_prior, r0, h0);
  fit_gp_output(x, y, with_prior, r1, h1);
  const double in_std = std::sqrt(
      (x.col(0).array() - x.col(0).mean()).square().sum() / x.rows());
  // Prior mode at (shape-1)/rate ~ 1.97 in normalized units.
  CHECK(std::abs(h1.lengthscale[0] / in_std - 1.97) <
        std::abs(h0.lengthscale[0] / in_std - 1.97));
}

TEST_CASE("prediction interpolates training data and reverts to the prior") {
  Rng rng(53);
  const int n = 30;
  MatrixXd x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = rng.uniform(-2.0, 2.0);
  MatrixXd y(n, 1);
  for (int i = 0; i < n; ++i) y(i, 0) = std::sin(2.0 * x(i, 0));

  GpModel gp;
  gp.X = x;
  gp.Y = y;
  gp.hyper.resize(1);
  FitOptions opt;
  Rng fit_rng(4);
  fit_gp_output(gp.X, gp.Y.col(0), opt, fit_rng, gp.hyper[0]);
  gp.refresh();

  VectorXd q(1);
  q << x(5, 0);
  const auto at_data = gp.predict_point(q);
  CHECK(at_data.mean[0] == Approx(y(5, 0)).margin(0.05));

  q << 40.0;
  const auto far = gp.predict_point(q);
  CHECK(std::abs(far.mean[0]) < 1e-6);
  CHECK(far.var[0] == Approx(gp.hyper[0].signal_var + gp.hyper[0].noise_var)
                          .epsilon(1e-6));
}

TEST_CASE("normalization is a pure reparameterization") {
  // Fit on raw data, then fit on affinely shifted inputs; predictions at
  // corresponding points must match closely.
  Rng rng(59);
  const int n = 40;
  MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    x(i, 1) = rng.uniform(-1.0, 1.0);
  }
  VectorXd y(n);
  for (int i = 0; i < n; ++i)
    y[i] = std::sin(x(i, 0)) + 0.3 * x(i, 1) + 0.01 * rng.normal();

  const VectorXd shift = (VectorXd(2) << 100.0, -50.0).finished();
  const VectorXd scale = (VectorXd(2) << 7.0, 0.2).finished();
  MatrixXd x2 = (x * scale.asDiagonal()).rowwise() + shift.transpose();

  GpModel a, b;
  a.X = x;
  a.Y = y;
  b.X = x2;
  b.Y = y;
  a.hyper.resize(1);
  b.hyper.resize(1);
  FitOptions opt;
  Rng ra(5), rb(5);
  fit_gp_output(a.X, a.Y.col(0), opt, ra, a.hyper[0]);
  fit_gp_output(b.X, b.Y.col(0), opt, rb, b.hyper[0]);
  a.refresh();
  b.refresh();

  VectorXd q(2);
  q << 0.3, -0.4;
  const VectorXd q2 = q.cwiseProduct(scale) + shift;
  const auto pa = a.predict_point(q);
  const auto pb = b.predict_point(q2);
  CHECK(pa.mean[0] == Approx(pb.mean[0]).margin(1e-6));
  CHECK(pa.var[0] == Approx(pb.var[0]).margin(1e-6));
}
