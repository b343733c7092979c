#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "safegp/common.hpp"
#include "safegp/normal.hpp"
#include "safegp/rng.hpp"

namespace safegp {

// Gaussian rectangle probabilities P(l <= x <= u), x ~ N(mu, Sigma).
// Dimension 1 is closed form, dimension 2 uses conditional Gauss-Legendre
// quadrature (exact to quadrature accuracy), dimension >= 3 uses randomized
// quasi-Monte Carlo with sequential conditioning.

struct RectOptions {
  int qmc_points = 5000;
  int qmc_shifts = 8;
  double qmc_target_error = 1e-4;
  std::uint64_t qmc_seed = 0x5afe0001ull;
};

namespace detail {

template <int N>
struct GaussLegendre {
  std::array<double, N> node;
  std::array<double, N> weight;
  GaussLegendre() {
    for (int i = 0; i < N; ++i) {
      double x = std::cos(kPi * (i + 0.75) / (N + 0.5));
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= N; ++k) {
          const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        const double dp = N * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-15) break;
      }
      node[i] = x;
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= N; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = N * (x * p1 - p0) / (x * x - 1.0);
      weight[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
  }
};

inline const GaussLegendre<32>& gl32() {
  static const GaussLegendre<32> t;
  return t;
}

// 2D rectangle after standardizing x1.  Integrates the conditional interval
// probability of x2 along x1 over four quadrature panels.
inline double rect_prob_2d(const VectorXd& mu, const MatrixXd& S,
                           const VectorXd& l, const VectorXd& u) {
  const double s1 = std::sqrt(S(0, 0));
  const double s2 = std::sqrt(S(1, 1));
  double rho = S(0, 1) / (s1 * s2);
  rho = std::min(1.0, std::max(-1.0, rho));

  const double a1 = std::isfinite(l[0]) ? (l[0] - mu[0]) / s1 : kNegInf;
  const double b1 = std::isfinite(u[0]) ? (u[0] - mu[0]) / s1 : kPosInf;
  const double a2 = std::isfinite(l[1]) ? (l[1] - mu[1]) / s2 : kNegInf;
  const double b2 = std::isfinite(u[1]) ? (u[1] - mu[1]) / s2 : kPosInf;

  const double w2 = 1.0 - rho * rho;
  if (w2 < 1e-12) {
    // Perfect correlation: x2 is a deterministic line in x1.
    double lo = a1, hi = b1;
    if (rho > 0) {
      lo = std::max(lo, a2);
      hi = std::min(hi, b2);
    } else {
      lo = std::max(lo, std::isfinite(b2) ? -b2 : kNegInf);
      hi = std::min(hi, std::isfinite(a2) ? -a2 : kPosInf);
    }
    if (hi <= lo) return 0.0;
    return normal_cdf(hi) - normal_cdf(lo);
  }
  const double w = std::sqrt(w2);

  const double tl = std::max(a1, -8.5);
  const double tu = std::min(b1, 8.5);
  if (tu <= tl) return 0.0;

  const auto& gl = gl32();
  const int panels = 4;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double pa = tl + (tu - tl) * p / panels;
    const double pb = tl + (tu - tl) * (p + 1) / panels;
    const double mid = 0.5 * (pa + pb);
    const double half = 0.5 * (pb - pa);
    double acc = 0.0;
    for (int i = 0; i < 32; ++i) {
      const double t = mid + half * gl.node[i];
      const double cu =
          std::isfinite(b2) ? normal_cdf((b2 - rho * t) / w) : 1.0;
      const double cl =
          std::isfinite(a2) ? normal_cdf((a2 - rho * t) / w) : 0.0;
      acc += gl.weight[i] * normal_pdf(t) * (cu - cl);
    }
    total += half * acc;
  }
  return std::min(1.0, std::max(0.0, total));
}

inline double frac(double x) { return x - std::floor(x); }

// Randomized QMC with a Richtmyer lattice and sequential conditioning.
inline double rect_prob_qmc(const VectorXd& mu, const MatrixXd& S,
                            const VectorXd& l, const VectorXd& u,
                            const RectOptions& opt) {
  const int d = static_cast<int>(mu.size());
  const MatrixXd L = robust_cholesky(S, "qmc rectangle covariance");
  VectorXd cl = l - mu, cu = u - mu;

  static const int primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                               31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  std::vector<double> gen(d - 1);
  for (int i = 0; i < d - 1; ++i) gen[i] = std::sqrt(double(primes[i % 20]));

  Rng shift_rng(opt.qmc_seed);
  std::vector<double> est;
  est.reserve(opt.qmc_shifts);
  std::vector<double> delta(d - 1), y(d);
  const double tiny = 1e-15;
  for (int s = 0; s < opt.qmc_shifts; ++s) {
    for (auto& dv : delta) dv = shift_rng.uniform();
    double sum = 0.0;
    for (int j = 1; j <= opt.qmc_points; ++j) {
      double f = 1.0;
      for (int i = 0; i < d && f > 0.0; ++i) {
        double shifted = 0.0;
        for (int k = 0; k < i; ++k) shifted += L(i, k) * y[k];
        const double di =
            std::isfinite(cl[i])
                ? normal_cdf((cl[i] - shifted) / L(i, i))
                : 0.0;
        const double ei =
            std::isfinite(cu[i])
                ? normal_cdf((cu[i] - shifted) / L(i, i))
                : 1.0;
        const double fi = ei - di;
        if (fi <= 0.0) {
          f = 0.0;
          break;
        }
        f *= fi;
        if (i < d - 1) {
          const double w = frac(j * gen[i] + delta[i]);
          double pq = di + w * fi;
          pq = std::min(1.0 - tiny, std::max(tiny, pq));
          y[i] = normal_quantile(pq);
        }
      }
      sum += f;
    }
    est.push_back(sum / opt.qmc_points);
    if (s >= 1) {
      const int n = static_cast<int>(est.size());
      double mean = 0.0;
      for (double e : est) mean += e;
      mean /= n;
      double var = 0.0;
      for (double e : est) var += (e - mean) * (e - mean);
      var /= (n - 1);
      const double err = 3.0 * std::sqrt(var / n);
      if (err < opt.qmc_target_error) break;
    }
  }
  double mean = 0.0;
  for (double e : est) mean += e;
  mean /= est.size();
  return std::min(1.0, std::max(0.0, mean));
}

// Splits dims into degenerate (variance below threshold, resolved by an
// indicator at the mean) and live dims.  Returns false if any indicator
// fails, i.e. the probability is exactly 0.
inline bool reduce_degenerate(const VectorXd& mu, const MatrixXd& S,
                              const VectorXd& l, const VectorXd& u,
                              VectorXd& mu_r, MatrixXd& S_r, VectorXd& l_r,
                              VectorXd& u_r, std::vector<int>& live) {
  const int d = static_cast<int>(mu.size());
  live.clear();
  for (int i = 0; i < d; ++i) {
    if (S(i, i) < kDegenerateVar) {
      if (mu[i] < l[i] || mu[i] > u[i]) return false;
    } else {
      live.push_back(i);
    }
  }
  const int m = static_cast<int>(live.size());
  mu_r.resize(m);
  l_r.resize(m);
  u_r.resize(m);
  S_r.resize(m, m);
  for (int i = 0; i < m; ++i) {
    mu_r[i] = mu[live[i]];
    l_r[i] = l[live[i]];
    u_r[i] = u[live[i]];
    for (int j = 0; j < m; ++j) S_r(i, j) = S(live[i], live[j]);
  }
  return true;
}

// Removes index k by conditioning on x_k = s.
inline void condition_out(const VectorXd& mu, const MatrixXd& S,
                          const VectorXd& l, const VectorXd& u, int k, double s,
                          VectorXd& mu_c, MatrixXd& S_c, VectorXd& l_c,
                          VectorXd& u_c) {
  const int d = static_cast<int>(mu.size());
  mu_c.resize(d - 1);
  l_c.resize(d - 1);
  u_c.resize(d - 1);
  S_c.resize(d - 1, d - 1);
  const double inv = 1.0 / S(k, k);
  int r = 0;
  for (int i = 0; i < d; ++i) {
    if (i == k) continue;
    mu_c[r] = mu[i] + S(i, k) * inv * (s - mu[k]);
    l_c[r] = l[i];
    u_c[r] = u[i];
    int c = 0;
    for (int j = 0; j < d; ++j) {
      if (j == k) continue;
      S_c(r, c) = S(i, j) - S(i, k) * S(j, k) * inv;
      ++c;
    }
    ++r;
  }
  for (int i = 0; i < d - 1; ++i) S_c(i, i) = std::max(S_c(i, i), 0.0);
}

inline double rect_prob_live(const VectorXd& mu, const MatrixXd& S,
                             const VectorXd& l, const VectorXd& u,
                             const RectOptions& opt) {
  const int d = static_cast<int>(mu.size());
  if (d == 0) return 1.0;
  if (d == 1) return interval_prob(mu[0], S(0, 0), l[0], u[0]).p;
  if (d == 2) return rect_prob_2d(mu, S, l, u);
  return rect_prob_qmc(mu, S, l, u, opt);
}

}  // namespace detail

// Sigma is read through its symmetric part so that the full-matrix gradient
// convention (half sensitivity on each off-diagonal mirror) is exact.
inline double rect_prob(const VectorXd& mu, const MatrixXd& S,
                        const VectorXd& l, const VectorXd& u,
                        const RectOptions& opt = {}) {
  const MatrixXd Ss = symmetrize(S);
  VectorXd mu_r, l_r, u_r;
  MatrixXd S_r;
  std::vector<int> live;
  if (!detail::reduce_degenerate(mu, Ss, l, u, mu_r, S_r, l_r, u_r, live))
    return 0.0;
  return detail::rect_prob_live(mu_r, S_r, l_r, u_r, opt);
}

namespace detail {

// d P / d mu via the boundary decomposition: each face contributes its
// marginal density times the conditional probability of the remaining box.
inline VectorXd rect_mu_grad_live(const VectorXd& mu, const MatrixXd& S,
                                  const VectorXd& l, const VectorXd& u,
                                  const RectOptions& opt) {
  const int d = static_cast<int>(mu.size());
  VectorXd g = VectorXd::Zero(d);
  if (d == 1) {
    g[0] = interval_prob(mu[0], S(0, 0), l[0], u[0]).d_mu;
    return g;
  }
  VectorXd mu_c, l_c, u_c;
  MatrixXd S_c;
  for (int k = 0; k < d; ++k) {
    double acc = 0.0;
    const double fl = normal_density_at(l[k], mu[k], S(k, k));
    if (fl > 0.0) {
      condition_out(mu, S, l, u, k, l[k], mu_c, S_c, l_c, u_c);
      acc += fl * rect_prob(mu_c, S_c, l_c, u_c, opt);
    }
    const double fu = normal_density_at(u[k], mu[k], S(k, k));
    if (fu > 0.0) {
      condition_out(mu, S, l, u, k, u[k], mu_c, S_c, l_c, u_c);
      acc -= fu * rect_prob(mu_c, S_c, l_c, u_c, opt);
    }
    g[k] = acc;
  }
  return g;
}

// Density of the (k, j) marginal at (sk, sj).
inline double pair_density(const VectorXd& mu, const MatrixXd& S, int k, int j,
                           double sk, double sj) {
  const double det = S(k, k) * S(j, j) - S(k, j) * S(k, j);
  if (det < 1e-300) return 0.0;
  const double dk = sk - mu[k], dj = sj - mu[j];
  const double q =
      (S(j, j) * dk * dk - 2.0 * S(k, j) * dk * dj + S(k, k) * dj * dj) / det;
  return std::exp(-0.5 * q) / (2.0 * kPi * std::sqrt(det));
}

}  // namespace detail

struct RectGrad {
  double p = 0.0;
  VectorXd d_mu;
  // Full-matrix gradient (both (i,j) and (j,i) carry half the sensitivity).
  MatrixXd d_sigma;
};

// Probability with exact gradients in mu and Sigma.  The Sigma gradient uses
// the identity d P / d Sigma_ij = 0.5 * d^2 P / d mu_i d mu_j, assembled from
// face and corner terms with conditional rectangles.
inline RectGrad rect_prob_grad(const VectorXd& mu, const MatrixXd& S,
                               const VectorXd& l, const VectorXd& u,
                               const RectOptions& opt = {}) {
  const int dim = static_cast<int>(mu.size());
  RectGrad out;
  out.d_mu = VectorXd::Zero(dim);
  out.d_sigma = MatrixXd::Zero(dim, dim);

  const MatrixXd Ss = symmetrize(S);
  VectorXd mu_r, l_r, u_r;
  MatrixXd S_r;
  std::vector<int> live;
  if (!detail::reduce_degenerate(mu, Ss, l, u, mu_r, S_r, l_r, u_r, live))
    return out;
  const int d = static_cast<int>(live.size());
  if (d == 0) {
    out.p = 1.0;
    return out;
  }

  out.p = detail::rect_prob_live(mu_r, S_r, l_r, u_r, opt);
  const VectorXd g_live = detail::rect_mu_grad_live(mu_r, S_r, l_r, u_r, opt);
  for (int k = 0; k < d; ++k) out.d_mu[live[k]] = g_live[k];

  MatrixXd H = MatrixXd::Zero(d, d);
  VectorXd mu_c, l_c, u_c;
  MatrixXd S_c;
  // Diagonal terms.
  for (int k = 0; k < d; ++k) {
    double acc = 0.0;
    const double bounds[2] = {l_r[k], u_r[k]};
    const double signs[2] = {1.0, -1.0};
    for (int b = 0; b < 2; ++b) {
      const double s = bounds[b];
      const double fk = normal_density_at(s, mu_r[k], S_r(k, k));
      if (fk == 0.0) continue;
      double pc = 1.0;
      double corr = 0.0;
      if (d > 1) {
        detail::condition_out(mu_r, S_r, l_r, u_r, k, s, mu_c, S_c, l_c, u_c);
        pc = rect_prob(mu_c, S_c, l_c, u_c, opt);
        const VectorXd gc = detail::rect_mu_grad_live(mu_c, S_c, l_c, u_c, opt);
        int r = 0;
        for (int i = 0; i < d; ++i) {
          if (i == k) continue;
          corr += gc[r] * S_r(i, k);
          ++r;
        }
        corr /= S_r(k, k);
      }
      acc += signs[b] * fk * ((s - mu_r[k]) / S_r(k, k) * pc - corr);
    }
    H(k, k) = acc;
  }
  // Corner terms.
  VectorXd mu_c2, l_c2, u_c2;
  MatrixXd S_c2;
  for (int k = 0; k < d; ++k) {
    for (int j = k + 1; j < d; ++j) {
      double acc = 0.0;
      const double bk[2] = {l_r[k], u_r[k]}, bj[2] = {l_r[j], u_r[j]};
      const double sg[2] = {1.0, -1.0};
      for (int a = 0; a < 2; ++a) {
        if (!std::isfinite(bk[a])) continue;
        for (int b = 0; b < 2; ++b) {
          if (!std::isfinite(bj[b])) continue;
          const double f2 =
              detail::pair_density(mu_r, S_r, k, j, bk[a], bj[b]);
          if (f2 == 0.0) continue;
          double pc2 = 1.0;
          if (d > 2) {
            detail::condition_out(mu_r, S_r, l_r, u_r, k, bk[a], mu_c, S_c,
                                  l_c, u_c);
            const int j_red = j > k ? j - 1 : j;
            detail::condition_out(mu_c, S_c, l_c, u_c, j_red, bj[b], mu_c2,
                                  S_c2, l_c2, u_c2);
            pc2 = rect_prob(mu_c2, S_c2, l_c2, u_c2, opt);
          }
          acc += sg[a] * sg[b] * f2 * pc2;
        }
      }
      H(k, j) = H(j, k) = acc;
    }
  }
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < d; ++j)
      out.d_sigma(live[k], live[j]) = 0.5 * H(k, j);
  return out;
}

}  // namespace safegp
