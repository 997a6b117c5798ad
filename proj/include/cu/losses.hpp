#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cu/common.hpp"
#include "cu/errors.hpp"
#include "cu/linalg.hpp"

namespace cu {

/// The six covariance assumptions: identity (no uncertainty), diagonal
/// (per-agent variance only), full (per-agent variance plus cross-agent
/// covariance), each under a Gaussian or Laplace likelihood.
enum class LossFamily {
  GaussianID,
  GaussianDIA,
  GaussianFULL,
  LaplaceID,
  LaplaceDIA,
  LaplaceFULL,
};

inline bool family_has_factor(LossFamily f) {
  return f != LossFamily::GaussianID && f != LossFamily::LaplaceID;
}
inline bool family_has_phi(LossFamily f) { return f == LossFamily::LaplaceFULL; }
inline bool family_is_full(LossFamily f) {
  return f == LossFamily::GaussianFULL || f == LossFamily::LaplaceFULL;
}
inline Family family_distribution(LossFamily f) {
  switch (f) {
    case LossFamily::GaussianID:
    case LossFamily::GaussianDIA:
    case LossFamily::GaussianFULL:
      return Family::Gaussian;
    default:
      return Family::Laplace;
  }
}

inline std::string loss_family_name(LossFamily f) {
  switch (f) {
    case LossFamily::GaussianID: return "id-l2";
    case LossFamily::GaussianDIA: return "gauss-dia";
    case LossFamily::GaussianFULL: return "gauss-full";
    case LossFamily::LaplaceID: return "id-l1";
    case LossFamily::LaplaceDIA: return "lap-dia";
    case LossFamily::LaplaceFULL: return "lap-full";
  }
  return "?";
}

inline LossFamily loss_family_from_name(const std::string& s) {
  if (s == "id-l2") return LossFamily::GaussianID;
  if (s == "gauss-dia") return LossFamily::GaussianDIA;
  if (s == "gauss-full") return LossFamily::GaussianFULL;
  if (s == "id-l1") return LossFamily::LaplaceID;
  if (s == "lap-dia") return LossFamily::LaplaceDIA;
  if (s == "lap-full") return LossFamily::LaplaceFULL;
  throw Error("unknown loss family: " + s);
}

/// Decoder outputs for one sample: predicted mean over m agents and d output
/// coordinates, plus (family permitting) an agent-space precision factor and
/// the learned mixture scale phi. One factor is shared by all d columns.
struct PredictiveParams {
  Mat mu;  // m x d
  std::optional<PrecisionFactor> factor;
  std::optional<double> phi;
  LossFamily family = LossFamily::GaussianID;
};

struct LossGradients {
  Mat d_mu;                        // m x d
  std::vector<double> d_lower;     // m x m, strict lower part
  std::vector<double> d_log_diag;  // m
  double d_phi = 0.0;
  double value = 0.0;
};

namespace detail {

inline void check_dims(const Mat& y, const PredictiveParams& p, LossFamily expected) {
  if (p.family != expected)
    throw FamilyMismatch("loss called with family " + loss_family_name(p.family) +
                         ", expected " + loss_family_name(expected));
  if (y.rows != p.mu.rows || y.cols != p.mu.cols)
    throw DimensionMismatch("loss: y and mu shapes differ");
  if (family_has_factor(expected)) {
    if (!p.factor) throw FamilyMismatch("loss: missing precision factor");
    if (p.factor->dim != y.rows) throw DimensionMismatch("loss: factor dim != agent count");
  }
  if (family_has_phi(expected) && !p.phi)
    throw FamilyMismatch("loss: missing phi");
}

inline LossGradients make_grads(int m, int d) {
  LossGradients g;
  g.d_mu = Mat(m, d);
  g.d_lower.assign(static_cast<size_t>(m) * m, 0.0);
  g.d_log_diag.assign(m, 0.0);
  return g;
}

// Shared full-covariance quadratic machinery. Accumulates, over columns c,
//   q      = sum_c r_c^T L D L^T r_c
//   d_mu   = -(L D L^T r_c) * weight
//   d_lower[a][b] += r_c[a] * (D L^T r_c)[b] * weight
//   d_log_diag[j] += 0.5 * d_j (L^T r_c)_j^2 * weight
inline double full_quadratic(const Mat& y, const Mat& mu, const PrecisionFactor& f,
                             double weight, LossGradients& g) {
  const int m = y.rows, d = y.cols;
  const std::vector<double> dj = f.diag();
  std::vector<double> r(m), u(m), w(m), lw(m);
  double q = 0.0;
  for (int c = 0; c < d; ++c) {
    for (int i = 0; i < m; ++i) r[i] = y.at(i, c) - mu.at(i, c);
    apply_lt(f, r, u);
    for (int j = 0; j < m; ++j) w[j] = dj[j] * u[j];
    apply_l(f, w, lw);
    for (int j = 0; j < m; ++j) q += u[j] * w[j];
    for (int i = 0; i < m; ++i) g.d_mu.at(i, c) = -weight * lw[i];
    for (int a = 1; a < m; ++a)
      for (int b = 0; b < a; ++b)
        g.d_lower[static_cast<size_t>(a) * m + b] += weight * r[a] * w[b];
    for (int j = 0; j < m; ++j) g.d_log_diag[j] += 0.5 * weight * u[j] * w[j];
  }
  return q;
}

}  // namespace detail

/// Negative log likelihood (constants dropped) for the full-covariance
/// Gaussian model, summed over the d output columns:
///   0.5 * [ sum_c q_c  -  d * sum_j log_diag_j ]
inline LossGradients loss_gaussian_full(const Mat& y, const PredictiveParams& p) {
  detail::check_dims(y, p, LossFamily::GaussianFULL);
  const int m = y.rows, d = y.cols;
  const PrecisionFactor& f = *p.factor;
  LossGradients g = detail::make_grads(m, d);
  const double q = detail::full_quadratic(y, p.mu, f, 1.0, g);
  for (int j = 0; j < m; ++j) g.d_log_diag[j] -= 0.5 * d;
  g.value = 0.5 * (q - d * f.log_det());
  return g;
}

/// Full-covariance Laplace model via the learned mixture scale phi:
///   0.5 * [ q/phi + m*d*log(phi) - d * sum_j log_diag_j ]
inline LossGradients loss_laplace_full(const Mat& y, const PredictiveParams& p) {
  detail::check_dims(y, p, LossFamily::LaplaceFULL);
  const double phi = *p.phi;
  if (!(phi > 0.0)) throw NonPositivePhi("loss_laplace_full: phi must be positive");
  const int m = y.rows, d = y.cols;
  const PrecisionFactor& f = *p.factor;
  LossGradients g = detail::make_grads(m, d);
  const double q = detail::full_quadratic(y, p.mu, f, 1.0 / phi, g);
  for (int j = 0; j < m; ++j) g.d_log_diag[j] -= 0.5 * d;
  g.value = 0.5 * (q / phi + m * d * std::log(phi) - d * f.log_det());
  g.d_phi = 0.5 * (-q / (phi * phi) + m * d / phi);
  return g;
}

/// Diagonal Gaussian model; log_diag stores per-agent log precision:
///   0.5 * sum_i [ exp(log_diag_i) * ||r_i||_2^2  -  d * log_diag_i ]
inline LossGradients loss_gaussian_dia(const Mat& y, const PredictiveParams& p) {
  detail::check_dims(y, p, LossFamily::GaussianDIA);
  const int m = y.rows, d = y.cols;
  const PrecisionFactor& f = *p.factor;
  LossGradients g = detail::make_grads(m, d);
  double value = 0.0;
  for (int i = 0; i < m; ++i) {
    const double prec = std::exp(f.log_diag[i]);
    double s2 = 0.0;
    for (int c = 0; c < d; ++c) {
      const double r = y.at(i, c) - p.mu.at(i, c);
      s2 += r * r;
      g.d_mu.at(i, c) = -prec * r;
    }
    value += 0.5 * (prec * s2 - d * f.log_diag[i]);
    g.d_log_diag[i] = 0.5 * (prec * s2 - d);
  }
  g.value = value;
  return g;
}

/// Diagonal Laplace model; log_diag stores per-agent log inverse scale:
///   sum_i [ exp(log_diag_i) * ||r_i||_1  -  d * log_diag_i ]
/// Subgradient 0 is used at residual coordinates exactly 0.
inline LossGradients loss_laplace_dia(const Mat& y, const PredictiveParams& p) {
  detail::check_dims(y, p, LossFamily::LaplaceDIA);
  const int m = y.rows, d = y.cols;
  const PrecisionFactor& f = *p.factor;
  LossGradients g = detail::make_grads(m, d);
  double value = 0.0;
  for (int i = 0; i < m; ++i) {
    const double prec = std::exp(f.log_diag[i]);
    double s1 = 0.0;
    for (int c = 0; c < d; ++c) {
      const double r = y.at(i, c) - p.mu.at(i, c);
      s1 += std::abs(r);
      g.d_mu.at(i, c) = r > 0.0 ? -prec : (r < 0.0 ? prec : 0.0);
    }
    value += prec * s1 - d * f.log_diag[i];
    g.d_log_diag[i] = prec * s1 - d;
  }
  g.value = value;
  return g;
}

/// Plain squared-l2 residual (identity covariance, no uncertainty).
inline LossGradients loss_id_l2(const Mat& y, const PredictiveParams& p) {
  detail::check_dims(y, p, LossFamily::GaussianID);
  const int m = y.rows, d = y.cols;
  LossGradients g = detail::make_grads(m, d);
  double value = 0.0;
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d; ++c) {
      const double r = y.at(i, c) - p.mu.at(i, c);
      value += r * r;
      g.d_mu.at(i, c) = -2.0 * r;
    }
  g.value = value;
  return g;
}

/// Plain l1 residual (identity covariance, no uncertainty).
inline LossGradients loss_id_l1(const Mat& y, const PredictiveParams& p) {
  detail::check_dims(y, p, LossFamily::LaplaceID);
  const int m = y.rows, d = y.cols;
  LossGradients g = detail::make_grads(m, d);
  double value = 0.0;
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d; ++c) {
      const double r = y.at(i, c) - p.mu.at(i, c);
      value += std::abs(r);
      g.d_mu.at(i, c) = r > 0.0 ? -1.0 : (r < 0.0 ? 1.0 : 0.0);
    }
  g.value = value;
  return g;
}

inline LossGradients compute_loss(const Mat& y, const PredictiveParams& p) {
  switch (p.family) {
    case LossFamily::GaussianID: return loss_id_l2(y, p);
    case LossFamily::GaussianDIA: return loss_gaussian_dia(y, p);
    case LossFamily::GaussianFULL: return loss_gaussian_full(y, p);
    case LossFamily::LaplaceID: return loss_id_l1(y, p);
    case LossFamily::LaplaceDIA: return loss_laplace_dia(y, p);
    case LossFamily::LaplaceFULL: return loss_laplace_full(y, p);
  }
  throw FamilyMismatch("compute_loss: bad family");
}

struct BatchSample {
  Mat y;
  PredictiveParams params;
};

struct BatchLoss {
  double mean_value = 0.0;
  std::vector<LossGradients> per_sample;  // gradients scaled by 1/N
};

/// Mean loss over a batch; per-sample gradients come back scaled by 1/N so
/// that summing them gives the gradient of the mean.
inline BatchLoss batch_loss(const std::vector<BatchSample>& batch, LossFamily family) {
  if (batch.empty()) throw EmptyBatch("batch_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  out.per_sample.reserve(batch.size());
  double sum = 0.0;
  for (const BatchSample& s : batch) {
    if (s.params.family != family)
      throw FamilyMismatch("batch_loss: mixed families in batch");
    LossGradients g = compute_loss(s.y, s.params);
    sum += g.value;
    for (double& v : g.d_mu.data) v *= inv_n;
    for (double& v : g.d_lower) v *= inv_n;
    for (double& v : g.d_log_diag) v *= inv_n;
    g.d_phi *= inv_n;
    out.per_sample.push_back(std::move(g));
  }
  out.mean_value = sum * inv_n;
  return out;
}

}  // namespace cu
