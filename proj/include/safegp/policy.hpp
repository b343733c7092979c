#pragma once

#include "safegp/common.hpp"
#include "safegp/moment_match.hpp"
#include "safegp/rng.hpp"

namespace safegp {

// Parametric state-feedback controllers with a bounded sine squashing stage:
//   u_d = mid_d + amp_d * sin(v_d / amp_d),   v = preactivation(x).
// The preactivation is either affine (theta_mat x + bias) or an RBF network.
// Control moments under a Gaussian state are computed by matching the joint
// (x, v) to a Gaussian and pushing it through the squash in closed form.

enum class PolicyKind { linear, rbf };

struct Policy {
  PolicyKind kind = PolicyKind::linear;
  int state_dim = 0;
  int control_dim = 0;

  // Affine preactivation.
  MatrixXd theta_mat;  // m x n
  VectorXd bias;       // m

  // RBF preactivation.  Lengthscales are stored in log form so parameter
  // round-trips are bitwise exact and positivity holds by construction.
  MatrixXd centers;  // k x n
  MatrixXd weights;  // k x m
  VectorXd log_ell;  // n

  VectorXd u_amp;  // m, half-range of each control
  VectorXd u_mid;  // m, center of each control range

  int param_count() const {
    if (kind == PolicyKind::linear)
      return control_dim * state_dim + control_dim;
    return static_cast<int>(centers.size() + weights.size() + log_ell.size());
  }

  VectorXd flatten() const {
    VectorXd p(param_count());
    if (kind == PolicyKind::linear) {
      int at = 0;
      for (int j = 0; j < theta_mat.cols(); ++j)
        for (int i = 0; i < theta_mat.rows(); ++i) p[at++] = theta_mat(i, j);
      for (int i = 0; i < bias.size(); ++i) p[at++] = bias[i];
    } else {
      int at = 0;
      for (int j = 0; j < centers.cols(); ++j)
        for (int i = 0; i < centers.rows(); ++i) p[at++] = centers(i, j);
      for (int j = 0; j < weights.cols(); ++j)
        for (int i = 0; i < weights.rows(); ++i) p[at++] = weights(i, j);
      for (int i = 0; i < log_ell.size(); ++i) p[at++] = log_ell[i];
    }
    return p;
  }

  void unflatten(const VectorXd& p) {
    if (p.size() != param_count())
      throw ConfigError("policy parameter vector has wrong length");
    if (kind == PolicyKind::linear) {
      int at = 0;
      for (int j = 0; j < theta_mat.cols(); ++j)
        for (int i = 0; i < theta_mat.rows(); ++i) theta_mat(i, j) = p[at++];
      for (int i = 0; i < bias.size(); ++i) bias[i] = p[at++];
    } else {
      int at = 0;
      for (int j = 0; j < centers.cols(); ++j)
        for (int i = 0; i < centers.rows(); ++i) centers(i, j) = p[at++];
      for (int j = 0; j < weights.cols(); ++j)
        for (int i = 0; i < weights.rows(); ++i) weights(i, j) = p[at++];
      for (int i = 0; i < log_ell.size(); ++i) log_ell[i] = p[at++];
    }
  }

  VectorXd preactivation(const VectorXd& x) const {
    if (kind == PolicyKind::linear) return theta_mat * x + bias;
    const VectorXd inv_sq = (-2.0 * log_ell.array()).exp();
    VectorXd v = VectorXd::Zero(control_dim);
    for (int i = 0; i < centers.rows(); ++i) {
      const VectorXd diff = x - centers.row(i).transpose();
      const double k =
          std::exp(-0.5 * diff.cwiseProduct(inv_sq.asDiagonal() * diff)
                             .sum());
      v += k * weights.row(i).transpose();
    }
    return v;
  }

  VectorXd act(const VectorXd& x) const {
    const VectorXd v = preactivation(x);
    VectorXd u(control_dim);
    for (int d = 0; d < control_dim; ++d) {
      u[d] = u_mid[d] + u_amp[d] * std::sin(v[d] / u_amp[d]);
      u[d] = std::min(u_mid[d] + u_amp[d],
                      std::max(u_mid[d] - u_amp[d], u[d]));
    }
    return u;
  }
};

inline Policy make_linear_policy(int state_dim, int control_dim,
                                 const VectorXd& u_amp, Rng& rng) {
  Policy p;
  p.kind = PolicyKind::linear;
  p.state_dim = state_dim;
  p.control_dim = control_dim;
  p.theta_mat = 0.1 * rng.normal_matrix(control_dim, state_dim);
  p.bias = VectorXd::Zero(control_dim);
  p.u_amp = u_amp;
  p.u_mid = VectorXd::Zero(control_dim);
  return p;
}

inline Policy make_rbf_policy(int state_dim, int control_dim, int n_basis,
                              const VectorXd& u_amp, const VectorXd& mu0,
                              const MatrixXd& sigma0, Rng& rng) {
  Policy p;
  p.kind = PolicyKind::rbf;
  p.state_dim = state_dim;
  p.control_dim = control_dim;
  const MatrixXd l = robust_cholesky(symmetrize(sigma0) +
                                     1e-6 * MatrixXd::Identity(state_dim,
                                                               state_dim));
  p.centers.resize(n_basis, state_dim);
  for (int i = 0; i < n_basis; ++i)
    p.centers.row(i) = (mu0 + l * rng.normal_vector(state_dim)).transpose();
  p.weights.resize(n_basis, control_dim);
  for (int d = 0; d < control_dim; ++d)
    p.weights.col(d) = 0.1 * u_amp[d] * rng.normal_vector(n_basis);
  p.log_ell = VectorXd::Zero(state_dim);
  p.u_amp = u_amp;
  p.u_mid = VectorXd::Zero(control_dim);
  return p;
}

struct ControlMoments {
  VectorXd mean;   // m
  MatrixXd cov;    // m x m
  MatrixXd cross;  // n x m, Cov(x, u)
};

namespace detail {

struct PreactMoments {
  VectorXd mean;
  MatrixXd cov;
  MatrixXd cross;  // n x m
};

// Owns the per-output weight columns the SeSystem points into; must outlive
// any use of `sys` and must not be copied or moved.
struct RbfSystemView {
  std::vector<VectorXd> beta_storage;
  SeSystem sys;

  explicit RbfSystemView(const Policy& p) {
    const int m = p.control_dim;
    sys.X = &p.centers;
    beta_storage.resize(m);
    sys.beta.resize(m);
    for (int d = 0; d < m; ++d) {
      beta_storage[d] = p.weights.col(d);
      sys.beta[d] = &beta_storage[d];
    }
    sys.inv_sq_ls.assign(m, (-2.0 * p.log_ell.array()).exp());
    sys.signal_var.assign(m, 1.0);
  }
  RbfSystemView(const RbfSystemView&) = delete;
  RbfSystemView& operator=(const RbfSystemView&) = delete;
};

inline PreactMoments preact_moments(const Policy& p, const VectorXd& mu,
                                    const MatrixXd& sigma) {
  PreactMoments out;
  if (p.kind == PolicyKind::linear) {
    out.mean = p.theta_mat * mu + p.bias;
    out.cov = p.theta_mat * sigma * p.theta_mat.transpose();
    out.cross = sigma * p.theta_mat.transpose();
    return out;
  }
  const RbfSystemView view(p);
  const MomentMatch mm = se_moment_match(view.sys, mu, sigma);
  out.mean = mm.mean;
  out.cov = mm.cov;
  out.cross = mm.cross;
  return out;
}

struct SquashGrads {
  // Adjoints into the preactivation moments.
  VectorXd mean_bar;
  MatrixXd cov_bar;
  MatrixXd cross_bar;
};

inline ControlMoments squash_moments(const Policy& p, const PreactMoments& v) {
  const int m = p.control_dim;
  const int n = p.state_dim;
  ControlMoments out;
  out.mean.resize(m);
  out.cov.resize(m, m);
  out.cross.resize(n, m);
  VectorXd md(m), vdd(m), ed(m);
  for (int d = 0; d < m; ++d) {
    const double a = p.u_amp[d];
    md[d] = v.mean[d] / a;
    vdd[d] = v.cov(d, d) / (a * a);
    ed[d] = std::exp(-0.5 * vdd[d]);
    out.mean[d] = p.u_mid[d] + a * std::sin(md[d]) * ed[d];
    out.cross.col(d) = v.cross.col(d) * (std::cos(md[d]) * ed[d]);
  }
  for (int d = 0; d < m; ++d) {
    for (int e = 0; e < m; ++e) {
      const double ad = p.u_amp[d], ae = p.u_amp[e];
      const double c = v.cov(d, e) / (ad * ae);
      const double pre =
          0.5 * ad * ae * std::exp(-0.5 * (vdd[d] + vdd[e]));
      out.cov(d, e) = pre * (std::cos(md[d] - md[e]) * std::expm1(c) -
                             std::cos(md[d] + md[e]) * std::expm1(-c));
    }
  }
  return out;
}

inline SquashGrads squash_moments_vjp(const Policy& p, const PreactMoments& v,
                                      const VectorXd& mean_bar,
                                      const MatrixXd& cov_bar,
                                      const MatrixXd& cross_bar) {
  const int m = p.control_dim;
  SquashGrads g;
  g.mean_bar = VectorXd::Zero(m);
  g.cov_bar = MatrixXd::Zero(m, m);
  g.cross_bar = MatrixXd::Zero(v.cross.rows(), m);

  VectorXd md(m), vdd(m), ed(m);
  for (int d = 0; d < m; ++d) {
    const double a = p.u_amp[d];
    md[d] = v.mean[d] / a;
    vdd[d] = v.cov(d, d) / (a * a);
    ed[d] = std::exp(-0.5 * vdd[d]);
  }
  // Mean and cross heads.
  for (int d = 0; d < m; ++d) {
    const double a = p.u_amp[d];
    const double sn = std::sin(md[d]), cs = std::cos(md[d]);
    double md_bar = mean_bar[d] * a * cs * ed[d];
    double vdd_bar = mean_bar[d] * a * sn * (-0.5 * ed[d]);
    const double dot = cross_bar.col(d).dot(v.cross.col(d));
    g.cross_bar.col(d) += cross_bar.col(d) * (cs * ed[d]);
    md_bar += dot * (-sn) * ed[d];
    vdd_bar += dot * cs * (-0.5 * ed[d]);
    g.mean_bar[d] += md_bar / a;
    g.cov_bar(d, d) += vdd_bar / (a * a);
  }
  // Covariance head, every ordered entry independently.
  for (int d = 0; d < m; ++d) {
    for (int e = 0; e < m; ++e) {
      const double f_bar = cov_bar(d, e);
      if (f_bar == 0.0) continue;
      const double ad = p.u_amp[d], ae = p.u_amp[e];
      const double c = v.cov(d, e) / (ad * ae);
      const double pre =
          0.5 * ad * ae * std::exp(-0.5 * (vdd[d] + vdd[e]));
      const double dm = md[d] - md[e], sm = md[d] + md[e];
      const double em1 = std::expm1(c), emn1 = std::expm1(-c);
      const double f = pre * (std::cos(dm) * em1 - std::cos(sm) * emn1);
      // d f / d md, d f / d me.
      const double dd =
          pre * (-std::sin(dm) * em1 + std::sin(sm) * emn1);
      const double de =
          pre * (std::sin(dm) * em1 + std::sin(sm) * emn1);
      g.mean_bar[d] += f_bar * dd / ad;
      g.mean_bar[e] += f_bar * de / ae;
      // Prefactor depends on vdd[d] and vdd[e].
      g.cov_bar(d, d) += f_bar * (-0.5 * f) / (ad * ad);
      g.cov_bar(e, e) += f_bar * (-0.5 * f) / (ae * ae);
      // d f / d c.
      const double dc =
          pre * (std::cos(dm) * std::exp(c) + std::cos(sm) * std::exp(-c));
      g.cov_bar(d, e) += f_bar * dc / (ad * ae);
    }
  }
  return g;
}

}  // namespace detail

inline ControlMoments policy_moments(const Policy& p, const VectorXd& mu,
                                     const MatrixXd& sigma) {
  return detail::squash_moments(p, detail::preact_moments(p, mu, sigma));
}

struct PolicyMomentsAdjoint {
  VectorXd mu_bar;
  MatrixXd sigma_bar;
  VectorXd theta_bar;  // flattened parameter gradient
};

inline PolicyMomentsAdjoint policy_moments_vjp(const Policy& p,
                                               const VectorXd& mu,
                                               const MatrixXd& sigma,
                                               const VectorXd& mean_bar,
                                               const MatrixXd& cov_bar,
                                               const MatrixXd& cross_bar) {
  const detail::PreactMoments v = detail::preact_moments(p, mu, sigma);
  const detail::SquashGrads sg =
      detail::squash_moments_vjp(p, v, mean_bar, cov_bar, cross_bar);

  PolicyMomentsAdjoint adj;
  const int n = p.state_dim, m = p.control_dim;
  adj.theta_bar = VectorXd::Zero(p.param_count());

  if (p.kind == PolicyKind::linear) {
    // v_mean = Th mu + b ; v_cov = Th Sigma Th' ; v_cross = Sigma Th'.
    adj.mu_bar = p.theta_mat.transpose() * sg.mean_bar;
    adj.sigma_bar =
        p.theta_mat.transpose() * sg.cov_bar * p.theta_mat;
    adj.sigma_bar.noalias() += sg.cross_bar * p.theta_mat;
    MatrixXd th_bar = sg.mean_bar * mu.transpose();
    th_bar.noalias() += sg.cov_bar * p.theta_mat * sigma.transpose();
    th_bar.noalias() +=
        sg.cov_bar.transpose() * p.theta_mat * sigma;
    th_bar.noalias() += sg.cross_bar.transpose() * sigma;
    int at = 0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) adj.theta_bar[at++] = th_bar(i, j);
    for (int i = 0; i < m; ++i) adj.theta_bar[at++] = sg.mean_bar[i];
    return adj;
  }

  const detail::RbfSystemView view(p);
  const SeAdjoints mm_adj = se_moment_match_vjp(
      view.sys, mu, sigma, sg.mean_bar, sg.cov_bar, sg.cross_bar, true);
  adj.mu_bar = mm_adj.m_bar;
  adj.sigma_bar = mm_adj.S_bar;
  int at = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < p.centers.rows(); ++i)
      adj.theta_bar[at++] = mm_adj.X_bar(i, j);
  for (int d = 0; d < m; ++d)
    for (int i = 0; i < p.centers.rows(); ++i)
      adj.theta_bar[at++] = mm_adj.beta_bar[d][i];
  const VectorXd inv_sq = view.sys.inv_sq_ls[0];
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int d = 0; d < m; ++d) acc += mm_adj.inv_sq_ls_bar[d][j];
    adj.theta_bar[at++] = acc * (-2.0 * inv_sq[j]);
  }
  return adj;
}

}  // namespace safegp
