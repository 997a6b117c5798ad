#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "cu/common.hpp"
#include "cu/errors.hpp"
#include "cu/linalg.hpp"
#include "cu/rng.hpp"

namespace cu {

struct MultivariateSample {
  std::vector<double> values;
  Family source_family = Family::Gaussian;
};

/// log N(y; mu, Lambda^-1) with Lambda given in factored form.
inline double gaussian_logpdf(std::span<const double> y, std::span<const double> mu,
                              const PrecisionFactor& factor) {
  const int m = factor.dim;
  if (static_cast<int>(y.size()) != m || static_cast<int>(mu.size()) != m)
    throw DimensionMismatch("gaussian_logpdf: size mismatch");
  const double q = quadratic_form(y, mu, factor);
  return -0.5 * m * std::log(2.0 * std::numbers::pi) + 0.5 * factor.log_det() - 0.5 * q;
}

namespace detail {

inline double log_add_exp(double a, double b) {
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

/// log K_{m/2-1}(x) for odd m, via the half-integer recurrence
/// K_{v+1}(x) = K_{v-1}(x) + (2v/x) K_v(x) run on e^x-scaled values in
/// log space, seeded with K_{1/2}(x) = K_{-1/2}(x) = sqrt(pi/(2x)) e^-x.
inline double log_bessel_k_half(int m, double x) {
  const double base = 0.5 * std::log(std::numbers::pi / (2.0 * x));
  if (m == 1 || m == 3) return base - x;
  double lk_prev = base;  // scaled order -1/2
  double lk_cur = base;   // scaled order +1/2
  // climb to order (m-2)/2 in unit steps
  const int steps = (m - 3) / 2;
  double nu = 0.5;
  for (int s = 0; s < steps; ++s) {
    const double lk_next = log_add_exp(lk_prev, std::log(2.0 * nu / x) + lk_cur);
    lk_prev = lk_cur;
    lk_cur = lk_next;
    nu += 1.0;
  }
  return lk_cur - x;
}

}  // namespace detail

/// Exact log density of the multivariate Laplace distribution defined as the
/// marginal of the exponential scale mixture y = mu + sqrt(z) C n with
/// z ~ Exp(mean lambda), C C^T = cov. Restricted to odd dimension, where the
/// Bessel order is half-integer and has a closed form.
inline double laplace_logpdf_exact(std::span<const double> y, std::span<const double> mu,
                                   const SquareMatrix& cov, double lambda) {
  const int m = cov.dim;
  if (static_cast<int>(y.size()) != m || static_cast<int>(mu.size()) != m)
    throw DimensionMismatch("laplace_logpdf_exact: size mismatch");
  if (m % 2 == 0) throw UnsupportedOrder("laplace_logpdf_exact: even dimension " +
                                         std::to_string(m));
  if (!(lambda > 0.0)) throw Error("laplace_logpdf_exact: lambda must be positive");

  const PrecisionFactor cf = ldl_factorize(cov);  // cov = L D L^T
  std::vector<double> u(m);
  for (int i = 0; i < m; ++i) u[i] = y[i] - mu[i];
  detail::solve_lower(cf, u);
  double q = 0.0;
  for (int j = 0; j < m; ++j) q += u[j] * u[j] / std::exp(cf.log_diag[j]);

  if (q == 0.0) {
    if (m >= 2) throw DegenerateRadius("laplace_logpdf_exact: density singular at y == mu");
    return -0.5 * cf.log_det() - 0.5 * std::log(2.0 * lambda);
  }

  const double x = std::sqrt(2.0 * q / lambda);
  const double nu = 0.5 * m - 1.0;
  return std::log(2.0) - 0.5 * m * std::log(2.0 * std::numbers::pi) - std::log(lambda) -
         0.5 * cf.log_det() + detail::log_bessel_k_half(m, x) -
         0.5 * nu * std::log(0.5 * lambda * q);
}

/// Log density of one scale-mixture member: a Gaussian whose covariance is
/// the factored precision's inverse scaled by phi.
inline double laplace_logpdf_mixture(std::span<const double> y, std::span<const double> mu,
                                     const PrecisionFactor& factor, double phi) {
  if (!(phi > 0.0)) throw NonPositivePhi("laplace_logpdf_mixture: phi must be positive");
  const int m = factor.dim;
  if (static_cast<int>(y.size()) != m || static_cast<int>(mu.size()) != m)
    throw DimensionMismatch("laplace_logpdf_mixture: size mismatch");
  const double q = quadratic_form(y, mu, factor);
  return 0.5 * factor.log_det() - 0.5 * m * std::log(2.0 * std::numbers::pi * phi) -
         q / (2.0 * phi);
}

/// Maximizer of f(z) = z^(-m/2) exp(-q/(2z)) over z > 0.
inline double optimal_z(double q, int m) {
  if (!(q > 0.0)) throw NonPositiveQ("optimal_z: q must be positive");
  if (m <= 0) throw DimensionMismatch("optimal_z: m must be positive");
  return q / static_cast<double>(m);
}

namespace detail {

// y = mu + L sqrt(D) n, optionally scaled by sqrt(z)
inline std::vector<double> scaled_gaussian_draw(std::span<const double> mu,
                                                const PrecisionFactor& cov_factor,
                                                double scale, SeededRng& rng) {
  const int m = cov_factor.dim;
  std::vector<double> v(m), w(m);
  for (int i = 0; i < m; ++i)
    v[i] = scale * std::exp(0.5 * cov_factor.log_diag[i]) * rng.normal();
  apply_l(cov_factor, v, w);
  for (int i = 0; i < m; ++i) w[i] += mu[i];
  return w;
}

}  // namespace detail

inline MultivariateSample sample_gaussian(std::span<const double> mu,
                                          const SquareMatrix& cov, SeededRng& rng) {
  if (static_cast<int>(mu.size()) != cov.dim)
    throw DimensionMismatch("sample_gaussian: size mismatch");
  const PrecisionFactor cf = ldl_factorize(cov);
  return {detail::scaled_gaussian_draw(mu, cf, 1.0, rng), Family::Gaussian};
}

inline MultivariateSample sample_laplace(std::span<const double> mu,
                                         const SquareMatrix& cov, double lambda,
                                         SeededRng& rng) {
  if (static_cast<int>(mu.size()) != cov.dim)
    throw DimensionMismatch("sample_laplace: size mismatch");
  if (!(lambda > 0.0)) throw Error("sample_laplace: lambda must be positive");
  const PrecisionFactor cf = ldl_factorize(cov);
  const double z = rng.exponential(lambda);
  return {detail::scaled_gaussian_draw(mu, cf, std::sqrt(z), rng), Family::Laplace};
}

}  // namespace cu
