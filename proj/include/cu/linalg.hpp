#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cu/common.hpp"
#include "cu/errors.hpp"

namespace cu {

struct SquareMatrix {
  int dim = 0;
  std::vector<double> e;  // row-major dim x dim

  SquareMatrix() = default;
  explicit SquareMatrix(int d) : dim(d), e(static_cast<size_t>(d) * d, 0.0) {}

  double& at(int i, int j) { return e[static_cast<size_t>(i) * dim + j]; }
  double at(int i, int j) const { return e[static_cast<size_t>(i) * dim + j]; }

  static SquareMatrix identity(int d) {
    SquareMatrix m(d);
    for (int i = 0; i < d; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

inline double max_abs(const SquareMatrix& m) {
  double v = 0.0;
  for (double x : m.e) v = std::max(v, std::abs(x));
  return v;
}

inline bool is_symmetric(const SquareMatrix& m, double rtol = 1e-12) {
  const double scale = std::max(1.0, max_abs(m));
  for (int i = 0; i < m.dim; ++i)
    for (int j = i + 1; j < m.dim; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > rtol * scale) return false;
  return true;
}

/// Square-root-free Cholesky factor of a precision (or covariance) matrix:
/// M = L * diag(exp(log_diag)) * L^T with L unit lower triangular. The unit
/// diagonal of L is implied; only the strictly lower part of `lower` is used.
struct PrecisionFactor {
  int dim = 0;
  std::vector<double> lower;     // row-major dim x dim, strict lower part
  std::vector<double> log_diag;  // log of the positive diagonal of D

  PrecisionFactor() = default;
  explicit PrecisionFactor(int d)
      : dim(d), lower(static_cast<size_t>(d) * d, 0.0), log_diag(d, 0.0) {}

  double& l(int i, int j) { return lower[static_cast<size_t>(i) * dim + j]; }
  double l(int i, int j) const { return lower[static_cast<size_t>(i) * dim + j]; }

  std::vector<double> diag() const {
    std::vector<double> d(dim);
    for (int j = 0; j < dim; ++j) d[j] = std::exp(log_diag[j]);
    return d;
  }

  /// log det of the assembled matrix; exact by construction.
  double log_det() const {
    double s = 0.0;
    for (double v : log_diag) s += v;
    return s;
  }

  static PrecisionFactor identity(int d) { return PrecisionFactor(d); }
};

namespace detail {

constexpr double kPivotTol = 1e-14;

// u = L^T r (L unit lower triangular)
inline void apply_lt(const PrecisionFactor& f, std::span<const double> r,
                     std::span<double> u) {
  const int m = f.dim;
  for (int j = 0; j < m; ++j) {
    double s = r[j];
    for (int i = j + 1; i < m; ++i) s += f.l(i, j) * r[i];
    u[j] = s;
  }
}

// y = L x
inline void apply_l(const PrecisionFactor& f, std::span<const double> x,
                    std::span<double> y) {
  const int m = f.dim;
  for (int i = 0; i < m; ++i) {
    double s = x[i];
    for (int j = 0; j < i; ++j) s += f.l(i, j) * x[j];
    y[i] = s;
  }
}

// solve L x = b in place (unit diagonal)
inline void solve_lower(const PrecisionFactor& f, std::span<double> x) {
  const int m = f.dim;
  for (int i = 0; i < m; ++i) {
    double s = x[i];
    for (int j = 0; j < i; ++j) s -= f.l(i, j) * x[j];
    x[i] = s;
  }
}

// solve L^T x = b in place
inline void solve_lower_t(const PrecisionFactor& f, std::span<double> x) {
  const int m = f.dim;
  for (int i = m - 1; i >= 0; --i) {
    double s = x[i];
    for (int j = i + 1; j < m; ++j) s -= f.l(j, i) * x[j];
    x[i] = s;
  }
}

}  // namespace detail

/// Factorize a symmetric positive-definite matrix as L D L^T.
inline PrecisionFactor ldl_factorize(const SquareMatrix& mat) {
  const int m = mat.dim;
  if (m <= 0) throw DimensionMismatch("ldl_factorize: empty matrix");
  if (!all_finite(mat.e)) throw NotSymmetric("ldl_factorize: non-finite entries");
  if (!is_symmetric(mat)) throw NotSymmetric("ldl_factorize: matrix is not symmetric");

  PrecisionFactor f(m);
  std::vector<double> d(m, 0.0);
  for (int j = 0; j < m; ++j) {
    double dj = mat.at(j, j);
    for (int k = 0; k < j; ++k) dj -= f.l(j, k) * f.l(j, k) * d[k];
    if (!(dj > detail::kPivotTol))
      throw NotPositiveDefinite("ldl_factorize: pivot " + std::to_string(dj) +
                                " at index " + std::to_string(j));
    d[j] = dj;
    f.log_diag[j] = std::log(dj);
    for (int i = j + 1; i < m; ++i) {
      double s = mat.at(i, j);
      for (int k = 0; k < j; ++k) s -= f.l(i, k) * f.l(j, k) * d[k];
      f.l(i, j) = s / dj;
    }
  }
  return f;
}

/// Assemble L D L^T back into a dense symmetric positive-definite matrix.
inline SquareMatrix assemble_precision(const PrecisionFactor& factor) {
  const int m = factor.dim;
  const std::vector<double> d = factor.diag();
  SquareMatrix a(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int k = 0; k <= j; ++k) {
        const double lik = (k == i) ? 1.0 : (k < i ? factor.l(i, k) : 0.0);
        const double ljk = (k == j) ? 1.0 : factor.l(j, k);
        s += lik * ljk * d[k];
      }
      a.at(i, j) = s;
      a.at(j, i) = s;
    }
  }
  return a;
}

/// Invert the factored precision via triangular solves, one unit column at a
/// time. Throws IllConditioned when the infinity-norm condition estimate of
/// the assembled matrix exceeds 1e12.
inline SquareMatrix precision_to_covariance(const PrecisionFactor& factor) {
  const int m = factor.dim;
  const std::vector<double> d = factor.diag();
  SquareMatrix cov(m);
  std::vector<double> col(m);
  for (int j = 0; j < m; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    detail::solve_lower(factor, col);
    for (int i = 0; i < m; ++i) col[i] /= d[i];
    detail::solve_lower_t(factor, col);
    for (int i = 0; i < m; ++i) cov.at(i, j) = col[i];
  }
  // symmetrize away solve round-off
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < i; ++j) {
      const double s = 0.5 * (cov.at(i, j) + cov.at(j, i));
      cov.at(i, j) = s;
      cov.at(j, i) = s;
    }

  const SquareMatrix lam = assemble_precision(factor);
  double norm_lam = 0.0, norm_cov = 0.0;
  for (int i = 0; i < m; ++i) {
    double rl = 0.0, rc = 0.0;
    for (int j = 0; j < m; ++j) {
      rl += std::abs(lam.at(i, j));
      rc += std::abs(cov.at(i, j));
    }
    norm_lam = std::max(norm_lam, rl);
    norm_cov = std::max(norm_cov, rc);
  }
  if (norm_lam * norm_cov > 1e12)
    throw IllConditioned("precision_to_covariance: condition estimate " +
                         std::to_string(norm_lam * norm_cov));
  return cov;
}

/// (y - mu)^T (L D L^T) (y - mu), evaluated through the factor.
inline double quadratic_form(std::span<const double> y, std::span<const double> mu,
                             const PrecisionFactor& factor) {
  const int m = factor.dim;
  if (static_cast<int>(y.size()) != m || static_cast<int>(mu.size()) != m)
    throw DimensionMismatch("quadratic_form: size mismatch");
  std::vector<double> r(m), u(m);
  for (int i = 0; i < m; ++i) r[i] = y[i] - mu[i];
  detail::apply_lt(factor, r, u);
  double q = 0.0;
  for (int j = 0; j < m; ++j) q += std::exp(factor.log_diag[j]) * u[j] * u[j];
  return q;
}

}  // namespace cu
