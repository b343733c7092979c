#pragma once

#include <vector>

#include "safegp/common.hpp"
#include "safegp/gp.hpp"

namespace safegp {

// Exact Gaussian moment matching for families of squared-exponential
// function systems
//   f_a(z) = sum_i beta_a[i] * s_a * exp(-0.5 (z - x_i)' inv(Lambda_a) (z - x_i))
// over a shared support set X, evaluated at z ~ N(m, S).  Returns the exact
// output mean, output covariance and input-output cross covariance.
//
// Two flavors share this code path:
//  * GP posterior means (beta = (K + noise I)^{-1} y).  Supplying weight_inv
//    and noise_var adds the expected predictive variance to the diagonal.
//  * Deterministic RBF networks (policies): leave weight_inv empty.
//
// The backward pass is a hand-derived vector-Jacobian product.  The forward
// pass reads S as a raw (not assumed symmetric) matrix through LU solves, so
// elementwise finite differences of single entries match the returned
// adjoints; symmetrization is the caller's explicit responsibility.

struct SeSystem {
  const MatrixXd* X = nullptr;              // E x D
  std::vector<const VectorXd*> beta;        // per output, E
  std::vector<VectorXd> inv_sq_ls;          // per output, D
  std::vector<double> signal_var;           // per output
  std::vector<const MatrixXd*> weight_inv;  // optional, per output, E x E
  std::vector<double> noise_var;            // optional, per output

  int outputs() const { return static_cast<int>(beta.size()); }
  bool has_gp_variance() const { return !weight_inv.empty(); }
};

struct MomentMatch {
  VectorXd mean;   // n
  MatrixXd cov;    // n x n
  MatrixXd cross;  // D x n, Cov(z, f(z))
};

struct SeAdjoints {
  VectorXd m_bar;
  MatrixXd S_bar;
  // Parameter adjoints, only filled when requested.
  MatrixXd X_bar;
  std::vector<VectorXd> beta_bar;
  std::vector<VectorXd> inv_sq_ls_bar;
};

namespace detail {

struct MmOutputWork {
  MatrixXd P;    // (S + Lambda)^{-1}, D x D
  double t = 0;  // |S Lambda^{-1} + I|^{-1/2}
  VectorXd q;    // E
  VectorXd gq;   // beta .* q
  VectorXd h;    // D
  MatrixXd LA;   // V * P, E x D
  MatrixXd N;    // V * diag(inv_sq_ls), E x D
  VectorXd u;    // -0.5 nu' inv(Lambda) nu, E
  double mean = 0;
};

struct MmWork {
  MatrixXd V;  // X - m', E x D
  std::vector<MmOutputWork> out;
};

struct MmPairWork {
  VectorXd a_vec;     // inv_sq_ls_a + inv_sq_ls_b
  MatrixXd R_inv;     // D x D
  MatrixXd T;         // R^{-1} S
  double t = 0;       // |R|^{-1/2}
  VectorXd r, c;      // E
  MatrixXd TNa, TNb;  // E x D
  MatrixXd L;         // exp(G), E x E
  double sab = 0;     // beta_a' L beta_b
  VectorXd l_beta_b;  // L * beta_b
};

inline void se_mm_forward_outputs(const SeSystem& sys, const VectorXd& m,
                                  const MatrixXd& S, MomentMatch& mm,
                                  MmWork& w) {
  const MatrixXd& X = *sys.X;
  const int e = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  const int n = sys.outputs();

  w.V = X.rowwise() - m.transpose();
  w.out.resize(n);
  mm.mean.resize(n);
  mm.cross.resize(d, n);

  for (int a = 0; a < n; ++a) {
    MmOutputWork& o = w.out[a];
    const VectorXd& ia = sys.inv_sq_ls[a];
    const VectorXd lambda = ia.cwiseInverse();
    MatrixXd aa = S;
    aa.diagonal() += lambda;
    Eigen::PartialPivLU<MatrixXd> lu(aa);
    const double det_aa = lu.determinant();
    // PSD S makes this determinant positive; a non-positive value means the
    // propagated covariance degenerated beyond repair, i.e. the rollout
    // diverged numerically.
    if (!(det_aa > 0.0))
      throw DivergenceError("moment match: non-positive |S + Lambda|");
    o.P = lu.inverse();
    double log_t = 0.0;
    for (int k = 0; k < d; ++k) log_t += std::log(lambda[k]);
    log_t = 0.5 * (log_t - std::log(det_aa));
    o.t = std::exp(log_t);

    o.LA.noalias() = w.V * o.P;
    const VectorXd wexp =
        -0.5 * (o.LA.cwiseProduct(w.V)).rowwise().sum();
    o.q = sys.signal_var[a] * o.t * wexp.array().exp();
    o.gq = sys.beta[a]->cwiseProduct(o.q);
    o.mean = sys.beta[a]->dot(o.q);
    mm.mean[a] = o.mean;
    o.h.noalias() = o.LA.transpose() * o.gq;
    mm.cross.col(a).noalias() = S * o.h;

    o.N = w.V * ia.asDiagonal();
    o.u = -0.5 * (w.V.cwiseProduct(o.N)).rowwise().sum();
    (void)e;
  }
}

inline void se_mm_pair(const SeSystem& sys, const MatrixXd& S, const MmWork& w,
                       int a, int b, MmPairWork& p) {
  const int d = static_cast<int>(S.rows());
  p.a_vec = sys.inv_sq_ls[a] + sys.inv_sq_ls[b];
  MatrixXd r_mat = S * p.a_vec.asDiagonal();
  r_mat.diagonal().array() += 1.0;
  Eigen::PartialPivLU<MatrixXd> lu(r_mat);
  const double det_r = lu.determinant();
  if (!(det_r > 0.0))
    throw DivergenceError("moment match: non-positive |S A + I|");
  p.t = 1.0 / std::sqrt(det_r);
  p.R_inv = lu.inverse();
  p.T.noalias() = p.R_inv * S;

  const MmOutputWork& oa = w.out[a];
  const MmOutputWork& ob = w.out[b];
  p.TNa.noalias() = oa.N * p.T;
  p.TNb.noalias() = ob.N * p.T;
  p.r = oa.u + 0.5 * (p.TNa.cwiseProduct(oa.N)).rowwise().sum();
  p.c = ob.u + 0.5 * (p.TNb.cwiseProduct(ob.N)).rowwise().sum();
  p.L.noalias() = p.TNa * ob.N.transpose();
  p.L.colwise() += p.r;
  p.L.rowwise() += p.c.transpose();
  p.L = p.L.array().exp();
  p.l_beta_b.noalias() = p.L * (*sys.beta[b]);
  p.sab = sys.beta[a]->dot(p.l_beta_b);
  (void)d;
}

}  // namespace detail

inline MomentMatch se_moment_match(const SeSystem& sys, const VectorXd& m,
                                   const MatrixXd& S) {
  const int n = sys.outputs();
  MomentMatch mm;
  detail::MmWork w;
  detail::se_mm_forward_outputs(sys, m, S, mm, w);
  mm.cov.resize(n, n);
  detail::MmPairWork p;
  for (int a = 0; a < n; ++a) {
    for (int b = a; b < n; ++b) {
      detail::se_mm_pair(sys, S, w, a, b, p);
      const double ehat =
          sys.signal_var[a] * sys.signal_var[b] * p.t * p.sab;
      double cov_ab = ehat - w.out[a].mean * w.out[b].mean;
      if (a == b && sys.has_gp_variance()) {
        const double tr_wl = sys.weight_inv[a]->cwiseProduct(p.L).sum();
        const double tau =
            sys.signal_var[a] * sys.signal_var[a] * p.t * tr_wl;
        cov_ab += sys.signal_var[a] + sys.noise_var[a] - tau;
      }
      mm.cov(a, b) = cov_ab;
      mm.cov(b, a) = cov_ab;
    }
  }
  return mm;
}

// Vector-Jacobian product.  mean_bar/cov_bar/cross_bar are the upstream
// sensitivities of the three outputs; cov_bar entries are treated
// independently (no symmetry assumption).
inline SeAdjoints se_moment_match_vjp(const SeSystem& sys, const VectorXd& m,
                                      const MatrixXd& S,
                                      const VectorXd& mean_bar,
                                      const MatrixXd& cov_bar,
                                      const MatrixXd& cross_bar,
                                      bool want_params = false) {
  const MatrixXd& X = *sys.X;
  const int e = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  const int n = sys.outputs();

  MomentMatch mm;
  detail::MmWork w;
  detail::se_mm_forward_outputs(sys, m, S, mm, w);

  SeAdjoints adj;
  adj.m_bar = VectorXd::Zero(d);
  adj.S_bar = MatrixXd::Zero(d, d);
  MatrixXd v_bar = MatrixXd::Zero(e, d);
  std::vector<VectorXd> isl_bar(n, VectorXd::Zero(d));
  if (want_params) {
    adj.X_bar = MatrixXd::Zero(e, d);
    adj.beta_bar.assign(n, VectorXd::Zero(e));
    adj.inv_sq_ls_bar.assign(n, VectorXd::Zero(d));
  }

  // Total mean sensitivities include the -mean_a*mean_b covariance terms.
  VectorXd mean_bar_total = mean_bar;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      mean_bar_total[a] -=
          (cov_bar(a, b) + cov_bar(b, a)) * w.out[b].mean;

  // Pair sweep.
  detail::MmPairWork p;
  MatrixXd l_bar, g_bar;
  std::vector<MatrixXd> n_bar(n);
  for (int a = 0; a < n; ++a) {
    for (int b = a; b < n; ++b) {
      const double ehat_bar =
          (a == b) ? cov_bar(a, a) : (cov_bar(a, b) + cov_bar(b, a));
      const bool diag_gp = (a == b) && sys.has_gp_variance();
      const double tau_bar = diag_gp ? -cov_bar(a, a) : 0.0;
      if (ehat_bar == 0.0 && tau_bar == 0.0) continue;

      detail::se_mm_pair(sys, S, w, a, b, p);
      const double sa = sys.signal_var[a], sb = sys.signal_var[b];
      const double c_ehat = ehat_bar * sa * sb * p.t;
      double t_bar = ehat_bar * sa * sb * p.sab;

      l_bar.noalias() =
          c_ehat * (*sys.beta[a]) * sys.beta[b]->transpose();
      if (diag_gp) {
        const double tr_wl = sys.weight_inv[a]->cwiseProduct(p.L).sum();
        t_bar += tau_bar * sa * sa * tr_wl;
        l_bar.noalias() += (tau_bar * sa * sa * p.t) * (*sys.weight_inv[a]);
      }
      if (want_params) {
        adj.beta_bar[a] += c_ehat * p.l_beta_b;
        adj.beta_bar[b] +=
            c_ehat * (p.L.transpose() * (*sys.beta[a]));
      }

      g_bar = l_bar.cwiseProduct(p.L);
      const VectorXd r_bar = g_bar.rowwise().sum();
      const VectorXd c_bar = g_bar.colwise().sum().transpose();

      const detail::MmOutputWork& oa = w.out[a];
      const detail::MmOutputWork& ob = w.out[b];
      MatrixXd t_mat_bar(d, d);
      // Pm = Na T Nb'.
      MatrixXd na_bar = g_bar * ob.N * p.T.transpose();
      MatrixXd nb_bar = g_bar.transpose() * p.TNa;
      t_mat_bar.noalias() = oa.N.transpose() * g_bar * ob.N;
      // r and c quadratic terms.
      const MatrixXd t_sym = 0.5 * (p.T + p.T.transpose());
      na_bar.noalias() += r_bar.asDiagonal() * oa.N * t_sym;
      nb_bar.noalias() += c_bar.asDiagonal() * ob.N * t_sym;
      t_mat_bar.noalias() +=
          0.5 * oa.N.transpose() * r_bar.asDiagonal() * oa.N;
      t_mat_bar.noalias() +=
          0.5 * ob.N.transpose() * c_bar.asDiagonal() * ob.N;
      // u terms (direct function of V and inv_sq_ls).
      v_bar.noalias() -= r_bar.asDiagonal() * oa.N;
      v_bar.noalias() -= c_bar.asDiagonal() * ob.N;
      isl_bar[a].noalias() -=
          0.5 * (w.V.array().square().matrix().transpose() * r_bar);
      isl_bar[b].noalias() -=
          0.5 * (w.V.array().square().matrix().transpose() * c_bar);
      // N = V diag(ia).
      v_bar.noalias() += na_bar * sys.inv_sq_ls[a].asDiagonal();
      v_bar.noalias() += nb_bar * sys.inv_sq_ls[b].asDiagonal();
      isl_bar[a] += (w.V.cwiseProduct(na_bar)).colwise().sum().transpose();
      isl_bar[b] += (w.V.cwiseProduct(nb_bar)).colwise().sum().transpose();
      // T = R^{-1} S with R = S diag(A) + I, and t = |R|^{-1/2}.
      const MatrixXd u_mat = p.R_inv.transpose() * t_mat_bar;
      adj.S_bar += u_mat;
      adj.S_bar.noalias() -=
          u_mat * p.T.transpose() * p.a_vec.asDiagonal();
      VectorXd a_bar =
          -(p.T * t_mat_bar.transpose() * p.T).diagonal();
      adj.S_bar.noalias() -=
          (0.5 * t_bar * p.t) * p.R_inv.transpose() * p.a_vec.asDiagonal();
      a_bar -= (0.5 * t_bar * p.t) * p.T.diagonal();
      isl_bar[a] += a_bar;
      isl_bar[b] += a_bar;
    }
  }

  // Mean and cross sweep.
  for (int a = 0; a < n; ++a) {
    const detail::MmOutputWork& o = w.out[a];
    const VectorXd c_bar_a = cross_bar.col(a);
    const double mu_bar = mean_bar_total[a];
    if (mu_bar == 0.0 && c_bar_a.isZero(0.0)) continue;

    adj.S_bar.noalias() += c_bar_a * o.h.transpose();
    const VectorXd h_bar = S.transpose() * c_bar_a;
    const VectorXd gq_bar = o.LA * h_bar;
    MatrixXd la_bar = o.gq * h_bar.transpose();

    VectorXd q_bar = mu_bar * (*sys.beta[a]);
    q_bar += sys.beta[a]->cwiseProduct(gq_bar);
    if (want_params) {
      adj.beta_bar[a] += mu_bar * o.q;
      adj.beta_bar[a] += o.q.cwiseProduct(gq_bar);
    }
    const VectorXd w_bar = q_bar.cwiseProduct(o.q);
    double t_bar = q_bar.dot(o.q) / o.t;

    la_bar.noalias() -= 0.5 * w_bar.asDiagonal() * w.V;
    v_bar.noalias() -= 0.5 * w_bar.asDiagonal() * o.LA;
    v_bar.noalias() += la_bar * o.P.transpose();
    const MatrixXd p_bar = w.V.transpose() * la_bar;
    const MatrixXd a_bar_mat =
        -o.P.transpose() * p_bar * o.P.transpose();
    adj.S_bar += a_bar_mat;
    VectorXd lam_bar = a_bar_mat.diagonal();

    // t = sqrt(prod(lambda) / |S + Lambda|).
    adj.S_bar.noalias() -= (0.5 * t_bar * o.t) * o.P.transpose();
    const VectorXd lambda = sys.inv_sq_ls[a].cwiseInverse();
    for (int k = 0; k < d; ++k)
      lam_bar[k] += t_bar * o.t * 0.5 * (1.0 / lambda[k] - o.P(k, k));
    // lambda = 1 / inv_sq_ls.
    for (int k = 0; k < d; ++k)
      isl_bar[a][k] -= lam_bar[k] * lambda[k] * lambda[k];
  }

  adj.m_bar = -v_bar.colwise().sum().transpose();
  if (want_params) {
    adj.X_bar = v_bar;
    for (int a = 0; a < n; ++a) adj.inv_sq_ls_bar[a] = isl_bar[a];
  }
  return adj;
}

// Builds the SE system view of a GP dynamics model (posterior mean weights,
// predictive-variance terms included).
inline SeSystem se_system_from_gp(const GpModel& gp) {
  SeSystem sys;
  sys.X = &gp.X;
  const int n = gp.output_dim();
  sys.beta.resize(n);
  sys.inv_sq_ls.resize(n);
  sys.signal_var.resize(n);
  sys.weight_inv.resize(n);
  sys.noise_var.resize(n);
  for (int a = 0; a < n; ++a) {
    sys.beta[a] = &gp.alpha[a];
    sys.inv_sq_ls[a] =
        gp.hyper[a].lengthscale.array().square().inverse().matrix();
    sys.signal_var[a] = gp.hyper[a].signal_var;
    sys.weight_inv[a] = &gp.w_inv[a];
    sys.noise_var[a] = gp.hyper[a].noise_var;
  }
  return sys;
}

}  // namespace safegp
