#pragma once

#include <functional>
#include <string>

#include "safegp/lbfgs.hpp"
#include "safegp/objective.hpp"

namespace safegp {

// Policy improvement: maximize J(theta) = R + xi * Q with L-BFGS, running the
// requested number of starts (first from theta as given, later ones from
// perturbed copies) and returning the best visited parameters.  The incumbent
// parameters always take part in the comparison, so the returned J can never
// fall below the initial J.

struct OptimizationReport {
  VectorXd theta_opt;
  double J_opt = kNegInf;
  double R_opt = 0.0;
  double Q_opt = 0.0;
  int iterations_used = 0;  // summed over all starts
  bool converged = false;
  double gradient_norm_final = 0.0;
};

// Maximizes an arbitrary differentiable objective (returns J, fills dJ/dtheta;
// -inf marks a divergent point) under the restart policy shared with
// improve_policy.  Exposed separately so surrogate objectives can exercise
// the driver directly.
inline OptimizationReport maximize_with_restarts(
    const std::function<double(const VectorXd&, VectorXd&)>& j_and_grad,
    const VectorXd& theta0, int maxiter, int restarts, Rng& rng) {
  if (maxiter < 1) throw ConfigError("improve_policy: maxiter must be >= 1");
  if (restarts < 1) throw ConfigError("improve_policy: restarts must be >= 1");

  const int dim = static_cast<int>(theta0.size());
  int divergent_starts = 0;

  const ObjectiveFn neg_j = [&](const VectorXd& th, VectorXd& grad) {
    const double j = j_and_grad(th, grad);
    if (!std::isfinite(j)) {
      grad.setZero(dim);
      return kPosInf;
    }
    grad = -grad;
    return -j;
  };

  OptimizationReport rep;
  rep.theta_opt = theta0;

  const auto consider = [&](const VectorXd& th, double j, int iters,
                            bool converged, double grad_norm) {
    rep.iterations_used += iters;
    if (!std::isfinite(j)) return;
    if (j > rep.J_opt) {
      rep.theta_opt = th;
      rep.J_opt = j;
      rep.converged = converged;
      rep.gradient_norm_final = grad_norm;
    }
  };

  LbfgsOptions lopt;
  lopt.max_iters = maxiter;

  const auto run_start = [&](const VectorXd& th_init) {
    VectorXd g0(dim);
    const double f0 = neg_j(th_init, g0);
    if (!std::isfinite(f0)) {
      ++divergent_starts;
      return kPosInf;
    }
    const LbfgsResult res = lbfgs_minimize(neg_j, th_init, lopt);
    consider(res.x, -res.f, res.iters, res.converged, res.grad.norm());
    return res.grad.norm();
  };

  {
    // The incumbent counts even if every optimization start diverges later.
    VectorXd g0(dim);
    const double j0 = j_and_grad(theta0, g0);
    if (std::isfinite(j0)) consider(theta0, j0, 0, false, g0.norm());
  }

  const auto perturbed = [&]() {
    const VectorXd scale = 0.1 * (theta0.cwiseAbs().array() + 1.0).matrix();
    return VectorXd(theta0 + scale.cwiseProduct(rng.normal_vector(dim)));
  };

  double last_grad_norm = run_start(theta0);
  for (int s = 1; s < restarts; ++s)
    last_grad_norm = std::min(last_grad_norm, run_start(perturbed()));

  // A vanishing gradient right away usually means a symmetric or flat start;
  // try up to two perturbed recoveries.
  for (int extra = 0; extra < 2 && std::isfinite(last_grad_norm) &&
                      last_grad_norm < 1e-8;
       ++extra)
    last_grad_norm = run_start(perturbed());

  // If the incumbent and every perturbed start diverge, the whole
  // neighborhood drives rollouts out of the model's support.  Shrinking the
  // parameters pulls the controller toward a near-constant one with bounded
  // rollouts, so walk a shrink ladder before giving up.
  for (double shrink : {0.3, 0.1, 0.01}) {
    if (std::isfinite(rep.J_opt)) break;
    run_start(shrink * theta0);
  }

  if (!std::isfinite(rep.J_opt))
    throw OptimizationError(
        "policy improvement failed: initial parameters and all " +
        std::to_string(divergent_starts) +
        " optimization starts hit divergent rollouts");
  return rep;
}

inline OptimizationReport improve_policy(const Policy& shape,
                                         const ObjectiveContext& ctx,
                                         int maxiter, int restarts, Rng& rng) {
  const auto j_and_grad = [&](const VectorXd& th, VectorXd& grad) {
    const ObjectiveGradEval g = objective_and_gradient(ctx, shape, th);
    grad = g.grad;
    return g.diverged ? kNegInf : g.J;
  };
  OptimizationReport rep = maximize_with_restarts(
      j_and_grad, shape.flatten(), maxiter, restarts, rng);

  const ObjectiveEval fin = evaluate_objective(ctx, shape, rep.theta_opt);
  rep.J_opt = fin.J;
  rep.R_opt = fin.R;
  rep.Q_opt = fin.Q;
  return rep;
}

}  // namespace safegp
