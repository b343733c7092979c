#pragma once

#include <deque>
#include <functional>

#include "safegp/common.hpp"

namespace safegp {

// Limited-memory BFGS minimizer with a strong Wolfe line search.
// Non-finite objective values are treated as "stepped too far": the line
// search brackets back toward the last good point, so objectives may use an
// infinite sentinel for divergent regions.

struct LbfgsOptions {
  int max_iters = 100;
  int memory = 10;
  double grad_tol = 1e-8;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_evals = 25;
};

struct LbfgsResult {
  VectorXd x;
  double f = 0.0;
  VectorXd grad;
  int iters = 0;
  int evals = 0;
  bool converged = false;
};

using ObjectiveFn = std::function<double(const VectorXd&, VectorXd&)>;

inline LbfgsResult lbfgs_minimize(const ObjectiveFn& fn, const VectorXd& x0,
                                  const LbfgsOptions& opt = {}) {
  const int n = static_cast<int>(x0.size());
  LbfgsResult best;
  best.x = x0;
  best.grad = VectorXd::Zero(n);

  VectorXd x = x0, g(n);
  int evals = 0;
  auto eval = [&](const VectorXd& p, VectorXd& grad_out) {
    ++evals;
    const double f = fn(p, grad_out);
    if (std::isfinite(f) && (f < best.f || evals == 1)) {
      best.f = f;
      best.x = p;
      best.grad = grad_out;
    }
    return f;
  };

  double f = eval(x, g);
  if (!std::isfinite(f)) {
    best.f = f;
    best.evals = evals;
    return best;
  }

  std::deque<VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  VectorXd x_new(n), g_new(n);

  int it = 0;
  for (; it < opt.max_iters; ++it) {
    if (g.norm() < opt.grad_tol) {
      best.converged = true;
      break;
    }
    // Two-loop recursion.
    VectorXd q = g;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    VectorXd d = -q;
    double dg = d.dot(g);
    if (!(dg < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      dg = -g.squaredNorm();
    }

    // Strong Wolfe line search (bracket then zoom).
    const double f0 = f, dg0 = dg;
    double a_prev = 0.0, f_prev = f0;
    double a = (it == 0) ? std::min(1.0, 1.0 / std::max(1e-12, g.norm()))
                         : 1.0;
    double a_lo = 0.0, a_hi = 0.0, f_lo = f0;
    bool bracketed = false, found = false;
    double f_a = f0;
    int ls = 0;
    for (; ls < opt.max_line_evals; ++ls) {
      x_new = x + a * d;
      f_a = eval(x_new, g_new);
      if (!std::isfinite(f_a) || f_a > f0 + opt.c1 * a * dg0 ||
          (ls > 0 && f_a >= f_prev)) {
        a_lo = a_prev;
        f_lo = f_prev;
        a_hi = a;
        bracketed = true;
        break;
      }
      const double dg_a = g_new.dot(d);
      if (std::abs(dg_a) <= -opt.c2 * dg0) {
        found = true;
        break;
      }
      if (dg_a >= 0.0) {
        a_lo = a;
        f_lo = f_a;
        a_hi = a_prev;
        bracketed = true;
        break;
      }
      a_prev = a;
      f_prev = f_a;
      a *= 2.0;
    }
    if (bracketed) {
      for (; ls < opt.max_line_evals; ++ls) {
        a = 0.5 * (a_lo + a_hi);
        x_new = x + a * d;
        f_a = eval(x_new, g_new);
        if (!std::isfinite(f_a) || f_a > f0 + opt.c1 * a * dg0 ||
            f_a >= f_lo) {
          a_hi = a;
        } else {
          const double dg_a = g_new.dot(d);
          if (std::abs(dg_a) <= -opt.c2 * dg0) {
            found = true;
            break;
          }
          if (dg_a * (a_hi - a_lo) >= 0.0) a_hi = a_lo;
          a_lo = a;
          f_lo = f_a;
        }
        if (std::abs(a_hi - a_lo) < 1e-16 * (1.0 + std::abs(a_lo))) break;
      }
    }
    if (!found && !(std::isfinite(f_a) && f_a < f0)) {
      // No progress possible along this direction.
      break;
    }

    VectorXd s_vec = x_new - x;
    VectorXd y_vec = g_new - g;
    const double sy = s_vec.dot(y_vec);
    x.swap(x_new);
    g.swap(g_new);
    f = f_a;
    if (sy > 1e-12 * s_vec.norm() * y_vec.norm()) {
      s_hist.push_back(std::move(s_vec));
      y_hist.push_back(std::move(y_vec));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
  }
  if (g.norm() < opt.grad_tol) best.converged = true;
  best.iters = it;
  best.evals = evals;
  return best;
}

}  // namespace safegp
