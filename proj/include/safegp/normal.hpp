#pragma once

#include <cmath>

#include "safegp/common.hpp"

namespace safegp {

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

// Standard normal CDF through erfc, accurate in both tails.
inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

// Inverse standard normal CDF: rational approximation refined by one Halley
// step, accurate to a few ulp over (0, 1).
inline double normal_quantile(double p) {
  if (p <= 0.0) return kNegInf;
  if (p >= 1.0) return kPosInf;
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// Density of N(mu, var) at s; 0 at infinite s.
inline double normal_density_at(double s, double mu, double var) {
  if (!std::isfinite(s)) return 0.0;
  const double sd = std::sqrt(var);
  return normal_pdf((s - mu) / sd) / sd;
}

struct IntervalProb {
  double p = 0.0;
  double d_mu = 0.0;
  double d_var = 0.0;
};

inline constexpr double kDegenerateVar = 1e-12;

// P(l <= x <= u) for x ~ N(mu, var), with derivatives in mu and var.
// Degenerate variance collapses to an indicator at the mean (flat gradient).
inline IntervalProb interval_prob(double mu, double var, double l, double u) {
  IntervalProb out;
  if (var < kDegenerateVar) {
    out.p = (mu >= l && mu <= u) ? 1.0 : 0.0;
    return out;
  }
  const double sd = std::sqrt(var);
  const double alpha = std::isfinite(l) ? (l - mu) / sd : kNegInf;
  const double beta = std::isfinite(u) ? (u - mu) / sd : kPosInf;
  const double cl = std::isfinite(l) ? normal_cdf(alpha) : 0.0;
  const double cu = std::isfinite(u) ? normal_cdf(beta) : 1.0;
  out.p = cu - cl;
  const double fl = normal_density_at(l, mu, var);
  const double fu = normal_density_at(u, mu, var);
  out.d_mu = fl - fu;
  const double tl = std::isfinite(l) ? (l - mu) / var * fl : 0.0;
  const double tu = std::isfinite(u) ? (u - mu) / var * fu : 0.0;
  out.d_var = 0.5 * (tl - tu);
  return out;
}

}  // namespace safegp
