#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cu/common.hpp"
#include "cu/distributions.hpp"
#include "cu/errors.hpp"
#include "cu/linalg.hpp"

namespace cu {

/// Mean over (agent, timestep) of the Euclidean distance between predicted
/// and ground-truth 2-D points. Inputs are flat [agents][timesteps][2].
inline double l2_of_mu(std::span<const double> pred, std::span<const double> gt,
                       int agents, int timesteps) {
  const size_t n = static_cast<size_t>(agents) * timesteps * 2;
  if (pred.size() != n || gt.size() != n)
    throw DimensionMismatch("l2_of_mu: size mismatch");
  double sum = 0.0;
  for (size_t p = 0; p < n; p += 2) {
    const double dx = pred[p] - gt[p];
    const double dy = pred[p + 1] - gt[p + 1];
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / (static_cast<double>(agents) * timesteps);
}

/// Mean absolute entrywise difference between two covariance matrices.
inline double l1_of_sigma(const SquareMatrix& pred, const SquareMatrix& gt) {
  if (pred.dim != gt.dim) throw DimensionMismatch("l1_of_sigma: dim mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < pred.e.size(); ++i) sum += std::abs(pred.e[i] - gt.e[i]);
  return sum / static_cast<double>(pred.e.size());
}

/// Closed-form KL divergence D(N(mu_g, sigma_g) || N(mu_e, sigma_e)).
inline double kl_gaussian(std::span<const double> mu_g, const SquareMatrix& sigma_g,
                          std::span<const double> mu_e, const SquareMatrix& sigma_e) {
  const int k = sigma_g.dim;
  if (sigma_e.dim != k || static_cast<int>(mu_g.size()) != k ||
      static_cast<int>(mu_e.size()) != k)
    throw DimensionMismatch("kl_gaussian: dim mismatch");
  const PrecisionFactor fg = ldl_factorize(sigma_g);
  const PrecisionFactor fe = ldl_factorize(sigma_e);
  const std::vector<double> de = fe.diag();

  // (mu_g - mu_e)^T sigma_e^-1 (mu_g - mu_e)
  std::vector<double> u(k);
  for (int i = 0; i < k; ++i) u[i] = mu_g[i] - mu_e[i];
  detail::solve_lower(fe, u);
  double maha = 0.0;
  for (int j = 0; j < k; ++j) maha += u[j] * u[j] / de[j];

  // trace(sigma_e^-1 sigma_g), one column solve at a time
  double trace = 0.0;
  std::vector<double> col(k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < k; ++i) col[i] = sigma_g.at(i, j);
    detail::solve_lower(fe, col);
    for (int i = 0; i < k; ++i) col[i] /= de[i];
    detail::solve_lower_t(fe, col);
    trace += col[j];
  }
  return 0.5 * (fe.log_det() - fg.log_det() - k + maha + trace);
}

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

struct LaplaceDist {
  std::vector<double> mu;
  SquareMatrix sigma;
  double lambda = 1.0;
};

/// Monte-Carlo KL divergence D(p_g || p_e) between two multivariate Laplace
/// distributions: average of log p_g - log p_e over draws from p_g, with the
/// standard error of the mean.
inline KlEstimate kl_laplace_mc(const LaplaceDist& gt, const LaplaceDist& est,
                                int n_samples, uint64_t seed) {
  const int m = gt.sigma.dim;
  if (est.sigma.dim != m || static_cast<int>(gt.mu.size()) != m ||
      static_cast<int>(est.mu.size()) != m)
    throw DimensionMismatch("kl_laplace_mc: dim mismatch");
  if (m % 2 == 0) throw UnsupportedOrder("kl_laplace_mc: exact density needs odd dim");
  if (n_samples < 10000) throw Error("kl_laplace_mc: n_samples must be >= 10^4");

  SeededRng rng(seed, 0x6b6cu);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const MultivariateSample s = sample_laplace(gt.mu, gt.sigma, gt.lambda, rng);
    const double diff = laplace_logpdf_exact(s.values, gt.mu, gt.sigma, gt.lambda) -
                        laplace_logpdf_exact(s.values, est.mu, est.sigma, est.lambda);
    sum += diff;
    sumsq += diff * diff;
  }
  const double mean = sum / n_samples;
  const double var = std::max(0.0, sumsq / n_samples - mean * mean);
  return {mean, std::sqrt(var / n_samples)};
}

/// Average displacement error: identical in form to l2_of_mu.
inline double ade(std::span<const double> pred, std::span<const double> gt, int agents,
                  int timesteps) {
  return l2_of_mu(pred, gt, agents, timesteps);
}

/// Final displacement error: mean over agents of the last-timestep distance.
inline double fde(std::span<const double> pred, std::span<const double> gt, int agents,
                  int timesteps) {
  const size_t n = static_cast<size_t>(agents) * timesteps * 2;
  if (pred.size() != n || gt.size() != n) throw DimensionMismatch("fde: size mismatch");
  if (timesteps < 1) throw DimensionMismatch("fde: need at least one timestep");
  double sum = 0.0;
  for (int a = 0; a < agents; ++a) {
    const size_t p = (static_cast<size_t>(a) * timesteps + timesteps - 1) * 2;
    const double dx = pred[p] - gt[p];
    const double dy = pred[p + 1] - gt[p + 1];
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / agents;
}

struct MetricReport {
  std::string family;
  std::string loss;
  int instances = 0;
  double l2_mu = 0.0;
  double ade = 0.0;
  double fde = 0.0;
  bool has_sigma = false;
  double l1_sigma = 0.0;
  double kl = 0.0;
  bool kl_is_mc = false;
  double mc_std_error = 0.0;
  std::vector<double> sigma_est;  // row-major, empty when has_sigma is false
};

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["family"] = r.family;
  j["loss"] = r.loss;
  j["instances"] = r.instances;
  j["l2_mu"] = r.l2_mu;
  j["ade"] = r.ade;
  j["fde"] = r.fde;
  if (r.has_sigma) {
    j["l1_sigma"] = r.l1_sigma;
    j["kl"] = r.kl;
    if (r.kl_is_mc) j["mc_std_error"] = r.mc_std_error;
    j["sigma_est"] = r.sigma_est;
  }
  return j;
}

inline std::string report_csv_header() { return "loss,l2_mu,l1_sigma,kl,ade,fde"; }

inline std::string report_csv_row(const MetricReport& r) {
  auto num = [](double v) {
    char tmp[40];
    std::snprintf(tmp, sizeof(tmp), "%.6g", v);
    return std::string(tmp);
  };
  std::string row = r.loss + "," + num(r.l2_mu) + ",";
  row += r.has_sigma ? num(r.l1_sigma) : std::string();
  row += ",";
  row += r.has_sigma ? num(r.kl) : std::string();
  row += "," + num(r.ade) + "," + num(r.fde);
  return row;
}

}  // namespace cu
