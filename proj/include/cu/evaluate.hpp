#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cu/common.hpp"
#include "cu/errors.hpp"
#include "cu/linalg.hpp"
#include "cu/metrics.hpp"
#include "cu/model.hpp"
#include "cu/synthgen.hpp"

namespace cu {

/// Per-instance prediction in raw (unnormalized) units.
struct PredictionOutput {
  std::vector<double> mu;                  // [agents][timesteps][2]
  std::optional<SquareMatrix> precision;   // agent-space, raw units
  std::optional<double> phi;
};

using Predictor = std::function<PredictionOutput(const Instance&)>;

struct EvalOptions {
  bool average_covariances = false;  // default: average precisions, then invert
  int mc_samples = 200000;
  uint64_t mc_seed = 20240;
};

/// Wraps a trained network; de-normalizes mu by input_scale and the
/// predicted precision by 1/input_scale^2.
inline Predictor net_predictor(const CuNetwork& net) {
  return [&net](const Instance& inst) {
    ForwardTape tape;
    const PredictiveParams p = forward(net, inst.x.coords, tape);
    const double s = net.shape.input_scale;
    PredictionOutput out;
    out.mu.resize(p.mu.data.size());
    for (size_t i = 0; i < out.mu.size(); ++i) out.mu[i] = p.mu.data[i] * s;
    if (p.factor) {
      SquareMatrix lam = assemble_precision(*p.factor);
      for (double& v : lam.e) v /= s * s;
      out.precision = std::move(lam);
    }
    out.phi = p.phi;
    return out;
  };
}

/// Ideal predictor: ground-truth means and the exact ground-truth covariance
/// factor (phi pinned at lambda so the implied covariance is exact).
inline Predictor oracle_predictor(const DatasetManifest& manifest, bool with_phi = false) {
  const SquareMatrix prec = [&] {
    const PrecisionFactor cov_f = ldl_factorize(manifest.sigma_gt);
    return precision_to_covariance(cov_f);  // inverse of sigma_gt
  }();
  const double lambda = manifest.lambda;
  return [prec, lambda, with_phi](const Instance& inst) {
    PredictionOutput out;
    out.mu = inst.mu_gt.coords;
    out.precision = prec;
    if (with_phi) out.phi = lambda;
    return out;
  };
}

/// Aggregate metrics over one split. The estimated covariance is the inverse
/// of the split-averaged predicted precision (or the averaged per-instance
/// covariance with average_covariances). For a phi-bearing model the
/// precision/phi scale split is not identified by the loss, only their
/// product; the estimate is de-gauged by the split-mean phi over lambda.
inline MetricReport evaluate_split(const Predictor& predict,
                                   std::span<const Instance> instances,
                                   const DatasetManifest& manifest,
                                   const EvalOptions& opts = {}) {
  MetricReport report;
  report.family = family_name(manifest.family);
  report.instances = static_cast<int>(instances.size());
  if (instances.empty()) return report;

  const int m = manifest.agents, T = manifest.timesteps;
  double sum_l2 = 0.0, sum_fde = 0.0;
  SquareMatrix acc(m);
  double phi_sum = 0.0;
  bool any_sigma = false, any_phi = false;

  for (const Instance& inst : instances) {
    const PredictionOutput pred = predict(inst);
    sum_l2 += l2_of_mu(pred.mu, inst.mu_gt.coords, m, T);
    sum_fde += fde(pred.mu, inst.mu_gt.coords, m, T);
    if (pred.precision) {
      any_sigma = true;
      if (opts.average_covariances) {
        const SquareMatrix cov = precision_to_covariance(ldl_factorize(*pred.precision));
        for (size_t i = 0; i < acc.e.size(); ++i)
          acc.e[i] += cov.e[i] * (pred.phi ? *pred.phi / manifest.lambda : 1.0);
      } else {
        for (size_t i = 0; i < acc.e.size(); ++i) acc.e[i] += pred.precision->e[i];
      }
    }
    if (pred.phi) {
      any_phi = true;
      phi_sum += *pred.phi;
    }
  }
  const double n = static_cast<double>(instances.size());
  report.l2_mu = sum_l2 / n;
  report.ade = report.l2_mu;
  report.fde = sum_fde / n;

  if (any_sigma) {
    for (double& v : acc.e) v /= n;
    SquareMatrix sigma_est;
    if (opts.average_covariances) {
      sigma_est = acc;
    } else {
      sigma_est = precision_to_covariance(ldl_factorize(acc));
      if (any_phi) {
        const double phi_mean = phi_sum / n;
        for (double& v : sigma_est.e) v *= phi_mean / manifest.lambda;
      }
    }
    report.has_sigma = true;
    report.sigma_est = sigma_est.e;
    report.l1_sigma = l1_of_sigma(sigma_est, manifest.sigma_gt);
    const std::vector<double> zero(m, 0.0);
    if (manifest.family == Family::Gaussian) {
      report.kl = kl_gaussian(zero, manifest.sigma_gt, zero, sigma_est);
      report.kl_is_mc = false;
    } else {
      const KlEstimate est = kl_laplace_mc({zero, manifest.sigma_gt, manifest.lambda},
                                           {zero, sigma_est, manifest.lambda},
                                           opts.mc_samples, opts.mc_seed);
      report.kl = est.value;
      report.kl_is_mc = true;
      report.mc_std_error = est.std_error;
    }
  }
  return report;
}

}  // namespace cu
