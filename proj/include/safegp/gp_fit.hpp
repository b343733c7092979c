#pragma once

#include <optional>

#include "safegp/gp.hpp"
#include "safegp/lbfgs.hpp"
#include "safegp/rng.hpp"

namespace safegp {

// Hyperparameter fitting by penalized marginal likelihood.  Fitting runs in a
// standardized space (inputs shifted/scaled per dimension, targets scaled);
// because the SE kernel is translation invariant this is a pure
// reparameterization, and the returned hyperparameters are mapped back to raw
// units so prediction code never sees the normalization.

struct GammaPrior {
  double shape = 0.0;  // <= 0 disables the prior
  double rate = 0.0;

  bool active() const { return shape > 0.0 && rate > 0.0; }
  double log_pdf(double x) const {
    return (shape - 1.0) * std::log(x) - rate * x;
  }
  double dlog_pdf_dlogx(double x) const { return (shape - 1.0) - rate * x; }
};

struct FitOptions {
  int restarts = 3;       // total starts, first one unperturbed
  int max_iters = 100;    // optimizer iterations per start
  bool fixed_noise = false;
  double fixed_noise_var = 1e-4;  // raw target units, used when fixed_noise
  GammaPrior lengthscale_prior;   // applied per dimension in fit space
  double noise_floor = 1e-6;      // min noise_var / signal_var ratio
  bool standardize = true;        // fit in whitened input/target space
};

namespace detail {

// Free parameters: [log ell (D), log sigma_f, rho] where in free-noise mode
// noise_var = floor * signal_var + exp(2 rho).  Fixed-noise mode drops rho.
struct NlmlTerms {
  double value = 0.0;
  VectorXd grad;
};

inline NlmlTerms nlml_and_grad(const MatrixXd& X, const VectorXd& y,
                               const VectorXd& p, const FitOptions& opt,
                               double fixed_noise_var_fit) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  const VectorXd ell = p.head(d).array().exp();
  const double s = std::exp(2.0 * p[d]);
  double noise;
  if (opt.fixed_noise) {
    noise = fixed_noise_var_fit;
  } else {
    noise = opt.noise_floor * s + std::exp(2.0 * p[d + 1]);
  }

  MatrixXd kn = se_gram(X, ell, s);
  const MatrixXd k = kn;
  kn.diagonal().array() += noise;
  const MatrixXd L = robust_cholesky(kn, "nlml gram matrix");
  const MatrixXd eye = MatrixXd::Identity(n, n);
  const MatrixXd linv = L.triangularView<Eigen::Lower>().solve(eye);
  const MatrixXd w = linv.transpose() * linv;
  const VectorXd a = w * y;

  NlmlTerms out;
  out.value = 0.5 * y.dot(a) + L.diagonal().array().log().sum() +
              0.5 * n * kLog2Pi;
  out.grad = VectorXd::Zero(p.size());

  const MatrixXd m = w - a * a.transpose();
  const MatrixXd mk = m.cwiseProduct(k);
  // d/d log ell_j: 0.5 * sum_ij mk_ij * (x_ij difference)^2 / ell_j^2.
  const VectorXd rs = mk.rowwise().sum();
  for (int j = 0; j < d; ++j) {
    const VectorXd xj = X.col(j);
    const VectorXd xj2 = xj.cwiseProduct(xj);
    const double quad = rs.dot(xj2) - xj.dot(mk * xj);
    out.grad[j] = quad / (ell[j] * ell[j]);
  }
  const double tr_m = m.trace();
  out.grad[d] = mk.sum();
  if (!opt.fixed_noise) {
    out.grad[d] += opt.noise_floor * s * tr_m;
    out.grad[d + 1] = std::exp(2.0 * p[d + 1]) * tr_m;
  }

  if (opt.lengthscale_prior.active()) {
    for (int j = 0; j < d; ++j) {
      out.value -= opt.lengthscale_prior.log_pdf(ell[j]);
      out.grad[j] -= opt.lengthscale_prior.dlog_pdf_dlogx(ell[j]);
    }
  }
  return out;
}

}  // namespace detail

struct FitReport {
  double nlml = 0.0;   // in fit space, prior included
  int iters = 0;
  int restarts_run = 0;
};

// Fits one output dimension.  `init` (raw units) seeds the first start when
// provided; otherwise a data heuristic is used.
inline FitReport fit_gp_output(const MatrixXd& X, const VectorXd& y,
                               const FitOptions& opt, Rng& rng, GpHyper& out,
                               const GpHyper* init = nullptr) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  if (n < 2) throw NumericalError("need at least 2 points to fit a gp");

  // Data scales, used for the fit-space transform and the init heuristic.
  VectorXd stat_std(d);
  const VectorXd col_mean = X.colwise().mean();
  for (int j = 0; j < d; ++j) {
    const double v = (X.col(j).array() - col_mean[j]).square().sum() / n;
    stat_std[j] = v > 1e-24 ? std::sqrt(v) : 1.0;
  }
  const double ty_var = y.squaredNorm() / n - std::pow(y.mean(), 2);
  const double stat_t_std = ty_var > 1e-24 ? std::sqrt(ty_var) : 1.0;

  const VectorXd in_mean =
      opt.standardize ? col_mean : VectorXd::Zero(d).eval();
  const VectorXd in_std = opt.standardize ? stat_std : VectorXd::Ones(d).eval();
  const double t_std = opt.standardize ? stat_t_std : 1.0;

  MatrixXd xn = X.rowwise() - in_mean.transpose();
  xn = xn * in_std.cwiseInverse().asDiagonal();
  const VectorXd yn = y / t_std;

  const double fixed_noise_var_fit = opt.fixed_noise_var / (t_std * t_std);
  const int np = opt.fixed_noise ? d + 1 : d + 2;

  VectorXd p0(np);
  if (init != nullptr) {
    for (int j = 0; j < d; ++j)
      p0[j] = std::log(init->lengthscale[j] / in_std[j]);
    p0[d] = 0.5 * std::log(init->signal_var / (t_std * t_std));
    if (!opt.fixed_noise) {
      const double s0 = init->signal_var / (t_std * t_std);
      const double res =
          std::max(init->noise_var / (t_std * t_std) - opt.noise_floor * s0,
                   1e-12);
      p0[d + 1] = 0.5 * std::log(res);
    }
    // A warm start from a degenerate earlier fit must still be evaluable.
    p0 = p0.cwiseMax(-25.0).cwiseMin(25.0);
  } else {
    // ell = input std, sigma_f = target std, noise std = 10% of target std.
    for (int j = 0; j < d; ++j) p0[j] = std::log(stat_std[j] / in_std[j]);
    p0[d] = std::log(stat_t_std / t_std);
    if (!opt.fixed_noise)
      p0[d + 1] = 0.5 * std::log(0.01) + std::log(stat_t_std / t_std);
  }

  // The marginal likelihood is flat in the lengthscale of an irrelevant
  // input, so the optimizer can walk log-lengthscales arbitrarily far (past
  // the point where exp overflows to inf, which later poisons moment
  // matching).  |p| beyond this bound has no legitimate optimum in fit space;
  // treat it as "stepped too far" so the line search brackets back.
  constexpr double kLogHyperBound = 30.0;
  auto objective = [&](const VectorXd& p, VectorXd& grad) {
    if ((p.array().abs() > kLogHyperBound).any()) {
      grad = VectorXd::Zero(p.size());
      return kPosInf;
    }
    try {
      auto t = detail::nlml_and_grad(xn, yn, p, opt, fixed_noise_var_fit);
      grad = t.grad;
      return t.value;
    } catch (const NumericalError&) {
      grad = VectorXd::Zero(p.size());
      return kPosInf;
    }
  };

  LbfgsOptions lopt;
  lopt.max_iters = opt.max_iters;
  LbfgsResult champion;
  bool have = false;
  FitReport report;
  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    VectorXd start = p0;
    if (r > 0)
      for (int j = 0; j < np; ++j) start[j] += 0.5 * rng.normal();
    LbfgsResult res = lbfgs_minimize(objective, start, lopt);
    ++report.restarts_run;
    if (!have || (std::isfinite(res.f) && res.f < champion.f)) {
      champion = res;
      have = true;
    }
  }
  // The unperturbed init is itself a candidate; lbfgs_minimize already
  // returns the best visited point, and start 0 visits p0 first.

  VectorXd pb = champion.x;
  double s_fit = std::exp(2.0 * pb[d]);
  if (opt.fixed_noise) {
    // Enforce the noise floor by capping the signal variance.
    const double s_max = fixed_noise_var_fit / opt.noise_floor;
    if (s_fit > s_max) {
      pb[d] = 0.5 * std::log(s_max);
      VectorXd g;
      const double f_clamped = objective(pb, g);
      VectorXd p_init = p0;
      if (std::exp(2.0 * p_init[d]) > s_max) p_init[d] = 0.5 * std::log(s_max);
      const double f_init = objective(p_init, g);
      if (f_init < f_clamped) pb = p_init;
      s_fit = std::exp(2.0 * pb[d]);
    }
  }

  out.lengthscale.resize(d);
  for (int j = 0; j < d; ++j)
    out.lengthscale[j] = std::exp(pb[j]) * in_std[j];
  out.signal_var = s_fit * t_std * t_std;
  if (opt.fixed_noise) {
    out.noise_var = opt.fixed_noise_var;  // exactly the requested value
  } else {
    const double noise_fit =
        opt.noise_floor * s_fit + std::exp(2.0 * pb[np - 1]);
    out.noise_var = noise_fit * t_std * t_std;
  }
  report.nlml = champion.f;
  report.iters = champion.iters;
  return report;
}

// Fits every output of the model and refreshes its caches.  When warm_start
// is set the current hyperparameters seed the first optimization start.
inline void fit_model(GpModel& model, const FitOptions& opt, Rng& rng,
                      bool warm_start = false) {
  const int e = model.output_dim();
  if (static_cast<int>(model.hyper.size()) != e) model.hyper.resize(e);
  for (int a = 0; a < e; ++a) {
    GpHyper h;
    const GpHyper* init =
        (warm_start && model.hyper[a].lengthscale.size() == model.input_dim())
            ? &model.hyper[a]
            : nullptr;
    fit_gp_output(model.X, model.Y.col(a), opt, rng, h, init);
    model.hyper[a] = h;
  }
  model.refresh();
}

}  // namespace safegp
