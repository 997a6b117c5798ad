#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cu/common.hpp"
#include "cu/errors.hpp"
#include "cu/losses.hpp"
#include "cu/model.hpp"
#include "cu/rng.hpp"
#include "cu/synthgen.hpp"

namespace cu {

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(size_t n = 0) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

/// One bias-corrected Adam update. Throws NonFiniteGradient (state and
/// parameters untouched) if any gradient entry is non-finite.
inline void adam_step(std::vector<double>& params, std::span<const double> grads,
                      AdamState& st, double lr) {
  if (grads.size() != params.size() || st.first_moment.size() != params.size())
    throw DimensionMismatch("adam_step: shape mismatch");
  if (!all_finite(grads)) throw NonFiniteGradient("adam_step: non-finite gradient");
  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.first_moment[i] = st.beta1 * st.first_moment[i] + (1.0 - st.beta1) * g;
    st.second_moment[i] = st.beta2 * st.second_moment[i] + (1.0 - st.beta2) * g * g;
    const double mhat = st.first_moment[i] / bc1;
    const double vhat = st.second_moment[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
  }
  if (!all_finite(params)) throw DivergedLoss("adam_step: parameters became non-finite");
}

struct TrainConfig {
  int batch_size = 72;
  double lr = 5e-3;
  int epochs = 36;
  uint64_t seed = 1;
  LossFamily family = LossFamily::GaussianFULL;
  int hidden = 128;
  double input_scale = 10.0;
  double clip_norm = 100.0;   // 0 disables clipping
  bool column_mean = true;    // average the per-sample loss over output columns
  bool allow_cross_family = false;
  // Fixed partitioning for in-batch parallelism; part of the numeric
  // contract, so results do not depend on the worker count.
  int grad_chunks = 4;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::string checkpoint;
  std::string digest;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<double> wall_seconds;  // kept out of the serialized log
  int64_t total_steps = 0;
  int best_epoch = 0;
  double best_val = 0.0;
};

struct TrainResult {
  CuNetwork net;       // final-epoch parameters
  CuNetwork best_net;  // best-validation parameters
  TrainLog log;
};

namespace detail {

struct TrainWorkspace {
  ForwardTape tape;
  Mat y;
};

inline void scale_gradients(LossGradients& g, double s) {
  if (s == 1.0) return;
  for (double& v : g.d_mu.data) v *= s;
  for (double& v : g.d_lower) v *= s;
  for (double& v : g.d_log_diag) v *= s;
  g.d_phi *= s;
  g.value *= s;
}

/// Loss (and optionally parameter gradients, accumulated) of one sample.
/// The instance's noisy trajectory is both the input and the target.
inline double sample_loss(const CuNetwork& net, const Instance& inst, double col_factor,
                          TrainWorkspace& ws, std::span<double> grad_accum) {
  const NetworkShape& sh = net.shape;
  const int m = sh.agents, d = sh.d_cols();
  if (ws.y.rows != m || ws.y.cols != d) ws.y = Mat(m, d);
  for (size_t i = 0; i < inst.x.coords.size(); ++i)
    ws.y.data[i] = inst.x.coords[i] / sh.input_scale;
  const PredictiveParams pred = forward(net, inst.x.coords, ws.tape);
  LossGradients lg = compute_loss(ws.y, pred);
  scale_gradients(lg, col_factor);
  if (!grad_accum.empty()) backward_into(net, ws.tape, lg, grad_accum);
  return lg.value;
}

inline std::vector<std::pair<int, int>> chunk_ranges(int count, int chunks) {
  std::vector<std::pair<int, int>> out;
  const int per = (count + chunks - 1) / chunks;
  for (int c = 0; c < chunks; ++c) {
    const int lo = c * per, hi = std::min(count, (c + 1) * per);
    if (lo >= hi) break;
    out.emplace_back(lo, hi);
  }
  return out;
}

}  // namespace detail

/// Mean loss over a split (no gradients); chunked the same way as training
/// so the reduction order is fixed.
inline double split_mean_loss(const CuNetwork& net, std::span<const Instance> split,
                              double col_factor, int chunks) {
  if (split.empty()) return 0.0;
  const auto ranges = detail::chunk_ranges(static_cast<int>(split.size()), chunks);
  std::vector<double> sums(ranges.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 1)
  for (size_t c = 0; c < ranges.size(); ++c) {
    detail::TrainWorkspace ws;
    double s = 0.0;
    for (int i = ranges[c].first; i < ranges[c].second; ++i)
      s += detail::sample_loss(net, split[i], col_factor, ws, {});
    sums[c] = s;
  }
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(split.size());
}

/// Adam training loop: deterministic per-epoch shuffles, fixed-chunk batch
/// parallelism, optional gradient-norm clipping, per-epoch checkpoints and
/// best-validation tracking. If run_dir is given, writes
/// checkpoints/epoch_k.ckpt, best.ckpt, log.jsonl and timings.txt.
inline TrainResult train(const TrainConfig& config, const DatasetManifest& manifest,
                         std::span<const Instance> train_set,
                         std::span<const Instance> val_set, CuNetwork net,
                         const std::filesystem::path* run_dir = nullptr) {
  if (config.batch_size <= 0 || config.epochs <= 0)
    throw Error("train: batch size and epochs must be positive");
  if (net.shape.family != config.family)
    throw FamilyMismatch("train: network family differs from config");
  if (!config.allow_cross_family &&
      family_distribution(config.family) != manifest.family)
    throw DatasetFamilyMismatch("train: loss family " + loss_family_name(config.family) +
                                " vs dataset family " + family_name(manifest.family));
  if (train_set.empty()) throw EmptyBatch("train: empty training split");

  const double col_factor = config.column_mean ? 1.0 / net.shape.d_cols() : 1.0;
  const int n = static_cast<int>(train_set.size());
  const size_t np = net.params.size();

  AdamState adam(np);
  TrainLog log;
  std::vector<double> best_params = net.params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  std::filesystem::path ckpt_dir;
  std::ofstream log_out;
  if (run_dir) {
    ckpt_dir = *run_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    log_out.open(*run_dir / "log.jsonl", std::ios::binary);
    if (!log_out) throw IoFailure("train: cannot write log.jsonl");
  }

  std::vector<int> perm(n);
  std::vector<double> grad(np);
  std::vector<std::vector<double>> chunk_grads;
  std::vector<detail::TrainWorkspace> workspaces;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < n; ++i) perm[i] = i;
    SeededRng shuffle_rng(config.seed, 0xE0000u + static_cast<uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.next_u64() % static_cast<uint64_t>(i + 1));
      std::swap(perm[i], perm[j]);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int count = std::min(config.batch_size, n - start);
      const auto ranges = detail::chunk_ranges(count, config.grad_chunks);
      if (chunk_grads.size() < ranges.size()) {
        chunk_grads.resize(ranges.size());
        workspaces.resize(ranges.size());
      }
      std::vector<double> losses(ranges.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 1)
      for (size_t c = 0; c < ranges.size(); ++c) {
        chunk_grads[c].assign(np, 0.0);
        double s = 0.0;
        for (int k = ranges[c].first; k < ranges[c].second; ++k)
          s += detail::sample_loss(net, train_set[perm[start + k]], col_factor,
                                   workspaces[c], chunk_grads[c]);
        losses[c] = s;
      }
      double loss_sum = 0.0;
      std::fill(grad.begin(), grad.end(), 0.0);
      for (size_t c = 0; c < ranges.size(); ++c) {
        loss_sum += losses[c];
        const std::vector<double>& cg = chunk_grads[c];
        for (size_t i = 0; i < np; ++i) grad[i] += cg[i];
      }
      const double batch_mean = loss_sum / count;
      if (!std::isfinite(batch_mean))
        throw DivergedLoss("train: loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += batch_mean;
      ++batches;
      const double inv = 1.0 / count;
      for (double& g : grad) g *= inv;
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (double g : grad) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > config.clip_norm) {
          const double s = config.clip_norm / norm;
          for (double& g : grad) g *= s;
        }
      }
      try {
        adam_step(net.params, grad, adam, config.lr);
        ++log.total_steps;
      } catch (const NonFiniteGradient& e) {
        std::cerr << "warning: skipped step (" << e.what() << ")\n";
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / batches;
    rec.val_loss = split_mean_loss(net, val_set, col_factor, config.grad_chunks);
    if (run_dir) {
      rec.checkpoint = "epoch_" + std::to_string(epoch) + ".ckpt";
      const auto path = ckpt_dir / rec.checkpoint;
      save_checkpoint(net, path.string());
      rec.digest = "fnv1a64:" + detail::hex64(detail::fnv1a64_file(path, detail::kFnvOffset));
      nlohmann::json j;
      j["epoch"] = rec.epoch;
      j["train_loss"] = rec.train_loss;
      j["val_loss"] = rec.val_loss;
      j["checkpoint"] = rec.checkpoint;
      j["digest"] = rec.digest;
      log_out << j.dump() << "\n";
      log_out.flush();
    }
    if (rec.val_loss < best_val || best_epoch == 0) {
      best_val = rec.val_loss;
      best_epoch = epoch;
      best_params = net.params;
    }
    log.epochs.push_back(rec);
    log.wall_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }

  log.best_epoch = best_epoch;
  log.best_val = best_val;

  TrainResult result;
  result.best_net = net;
  result.best_net.params = best_params;
  result.net = std::move(net);
  result.log = std::move(log);
  if (run_dir) {
    save_checkpoint(result.best_net, (*run_dir / "best.ckpt").string());
    std::ofstream times(*run_dir / "timings.txt");
    for (size_t i = 0; i < result.log.wall_seconds.size(); ++i)
      times << "epoch " << (i + 1) << " " << result.log.wall_seconds[i] << "s\n";
  }
  return result;
}

}  // namespace cu
