#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cu/common.hpp"
#include "cu/errors.hpp"
#include "cu/linalg.hpp"
#include "cu/losses.hpp"
#include "cu/rng.hpp"

namespace cu {

constexpr double kClampBound = 10.0;  // log_diag and log(phi) live in [-10, 10]

inline double smooth_clamp(double raw) { return kClampBound * std::tanh(raw / kClampBound); }
inline double smooth_clamp_deriv(double raw) {
  const double t = std::tanh(raw / kClampBound);
  return 1.0 - t * t;
}

/// Four fully connected layers, ReLU between them, identity after the last.
struct MlpDims {
  std::array<int, 5> s{};  // s[0] input .. s[4] output

  int param_count() const {
    int n = 0;
    for (int l = 0; l < 4; ++l) n += s[l + 1] * s[l] + s[l + 1];
    return n;
  }
};

struct MlpTape {
  // acts[0] is the input, acts[l+1] the post-activation output of layer l
  std::array<std::vector<double>, 5> acts;
};

namespace detail {

inline void mlp_forward(std::span<const double> params, const MlpDims& dims,
                        std::span<const double> input, MlpTape& tape) {
  tape.acts[0].assign(input.begin(), input.end());
  size_t off = 0;
  for (int l = 0; l < 4; ++l) {
    const int in = dims.s[l], out = dims.s[l + 1];
    const double* w = params.data() + off;
    const double* b = params.data() + off + static_cast<size_t>(out) * in;
    const std::vector<double>& a = tape.acts[l];
    std::vector<double>& next = tape.acts[l + 1];
    next.resize(out);
    for (int o = 0; o < out; ++o) {
      const double* wr = w + static_cast<size_t>(o) * in;
      double z = b[o];
      for (int i = 0; i < in; ++i) z += wr[i] * a[i];
      next[o] = (l < 3 && z < 0.0) ? 0.0 : z;
    }
    off += static_cast<size_t>(out) * in + out;
  }
}

// Accumulates parameter gradients into grad; if d_input is nonempty,
// writes the gradient with respect to the MLP input there (accumulating).
inline void mlp_backward(std::span<const double> params, const MlpDims& dims,
                         const MlpTape& tape, std::span<const double> d_out,
                         std::span<double> grad, std::span<double> d_input) {
  std::vector<double> g(d_out.begin(), d_out.end());
  // offsets of each layer's weights
  std::array<size_t, 4> off{};
  {
    size_t o = 0;
    for (int l = 0; l < 4; ++l) {
      off[l] = o;
      o += static_cast<size_t>(dims.s[l + 1]) * dims.s[l] + dims.s[l + 1];
    }
  }
  for (int l = 3; l >= 0; --l) {
    const int in = dims.s[l], out = dims.s[l + 1];
    const double* w = params.data() + off[l];
    double* gw = grad.data() + off[l];
    double* gb = gw + static_cast<size_t>(out) * in;
    const std::vector<double>& a = tape.acts[l];
    for (int o = 0; o < out; ++o) {
      const double go = g[o];
      if (go != 0.0) {
        double* gwr = gw + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) gwr[i] += go * a[i];
      }
      gb[o] += go;
    }
    if (l == 0) {
      if (!d_input.empty())
        for (int o = 0; o < out; ++o) {
          const double go = g[o];
          if (go == 0.0) continue;
          const double* wr = w + static_cast<size_t>(o) * in;
          for (int i = 0; i < in; ++i) d_input[i] += go * wr[i];
        }
      break;
    }
    std::vector<double> gprev(in, 0.0);
    for (int o = 0; o < out; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      const double* wr = w + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) gprev[i] += go * wr[i];
    }
    // ReLU mask of the previous layer's output
    for (int i = 0; i < in; ++i)
      if (a[i] <= 0.0) gprev[i] = 0.0;
    g = std::move(gprev);
  }
}

}  // namespace detail

/// Encoder plus up to three decoder heads (mean, precision factor, phi),
/// all four-layer MLPs over one flat parameter vector.
struct NetworkShape {
  int agents = 3;
  int timesteps = 50;
  int hidden = 128;
  LossFamily family = LossFamily::GaussianFULL;
  double input_scale = 10.0;

  int in_dim() const { return agents * timesteps * 2; }
  int d_cols() const { return timesteps * 2; }
  int lower_count() const { return agents * (agents - 1) / 2; }
  int prec_out() const { return lower_count() + agents; }
  bool has_prec() const { return family_has_factor(family); }
  bool has_phi() const { return family_has_phi(family); }

  MlpDims encoder_dims() const { return {{in_dim(), hidden, hidden, hidden, hidden}}; }
  MlpDims mu_dims() const { return {{hidden, hidden, hidden, hidden, in_dim()}}; }
  MlpDims prec_dims() const { return {{hidden, hidden, hidden, hidden, prec_out()}}; }
  MlpDims phi_dims() const { return {{hidden, hidden, hidden, hidden, 1}}; }

  size_t encoder_offset() const { return 0; }
  size_t mu_offset() const { return encoder_dims().param_count(); }
  size_t prec_offset() const { return mu_offset() + mu_dims().param_count(); }
  size_t phi_offset() const {
    return prec_offset() + (has_prec() ? prec_dims().param_count() : 0);
  }
  size_t param_count() const {
    return phi_offset() + (has_phi() ? phi_dims().param_count() : 0);
  }
};

struct CuNetwork {
  NetworkShape shape;
  uint64_t seed = 0;
  std::vector<double> params;
};

struct ForwardTape {
  size_t param_count = 0;
  MlpTape enc, mu, prec, phi;
  std::vector<double> prec_raw;
  double phi_raw = 0.0;
};

/// Maps a raw (unnormalized) flat trajectory to decoder outputs. The input
/// is divided by shape.input_scale first; mu comes back in normalized units.
inline PredictiveParams forward(const CuNetwork& net, std::span<const double> x,
                                ForwardTape& tape) {
  const NetworkShape& sh = net.shape;
  if (static_cast<int>(x.size()) != sh.in_dim())
    throw DimensionMismatch("forward: input size != agents*timesteps*2");
  tape.param_count = net.params.size();

  std::vector<double> xn(x.size());
  for (size_t i = 0; i < x.size(); ++i) xn[i] = x[i] / sh.input_scale;

  const std::span<const double> params(net.params);
  detail::mlp_forward(params.subspan(sh.encoder_offset()), sh.encoder_dims(), xn, tape.enc);
  const std::vector<double>& h = tape.enc.acts[4];

  detail::mlp_forward(params.subspan(sh.mu_offset()), sh.mu_dims(), h, tape.mu);

  PredictiveParams out;
  out.family = sh.family;
  const int m = sh.agents, d = sh.d_cols();
  out.mu = Mat(m, d);
  for (int a = 0; a < m; ++a)
    for (int c = 0; c < d; ++c) out.mu.at(a, c) = tape.mu.acts[4][static_cast<size_t>(a) * d + c];

  if (sh.has_prec()) {
    detail::mlp_forward(params.subspan(sh.prec_offset()), sh.prec_dims(), h, tape.prec);
    tape.prec_raw = tape.prec.acts[4];
    PrecisionFactor f(m);
    if (family_is_full(sh.family)) {
      int k = 0;
      for (int i = 1; i < m; ++i)
        for (int j = 0; j < i; ++j) f.l(i, j) = tape.prec_raw[k++];
    }
    for (int j = 0; j < m; ++j)
      f.log_diag[j] = smooth_clamp(tape.prec_raw[sh.lower_count() + j]);
    out.factor = std::move(f);
  }
  if (sh.has_phi()) {
    detail::mlp_forward(params.subspan(sh.phi_offset()), sh.phi_dims(), h, tape.phi);
    tape.phi_raw = tape.phi.acts[4][0];
    out.phi = std::exp(smooth_clamp(tape.phi_raw));
  }
  return out;
}

/// Reverse-mode gradients of the scalar loss with respect to every weight
/// and bias, accumulated into grad (which must be parameter-sized).
inline void backward_into(const CuNetwork& net, const ForwardTape& tape,
                          const LossGradients& lg, std::span<double> grad) {
  const NetworkShape& sh = net.shape;
  if (tape.param_count != net.params.size() || grad.size() != net.params.size())
    throw TapeMismatch("backward: tape does not match network");
  const int m = sh.agents, d = sh.d_cols();
  if (lg.d_mu.rows != m || lg.d_mu.cols != d)
    throw TapeMismatch("backward: loss gradient shape mismatch");

  std::vector<double> d_h(sh.hidden, 0.0);
  const std::span<const double> params(net.params);
  const std::span<double> gspan(grad);

  std::vector<double> d_mu_flat(static_cast<size_t>(m) * d);
  for (int a = 0; a < m; ++a)
    for (int c = 0; c < d; ++c) d_mu_flat[static_cast<size_t>(a) * d + c] = lg.d_mu.at(a, c);
  detail::mlp_backward(params.subspan(sh.mu_offset()), sh.mu_dims(), tape.mu, d_mu_flat,
                       gspan.subspan(sh.mu_offset()), d_h);

  if (sh.has_prec()) {
    std::vector<double> d_raw(sh.prec_out(), 0.0);
    if (family_is_full(sh.family)) {
      int k = 0;
      for (int i = 1; i < m; ++i)
        for (int j = 0; j < i; ++j) d_raw[k++] = lg.d_lower[static_cast<size_t>(i) * m + j];
    }
    for (int j = 0; j < m; ++j)
      d_raw[sh.lower_count() + j] =
          lg.d_log_diag[j] * smooth_clamp_deriv(tape.prec_raw[sh.lower_count() + j]);
    detail::mlp_backward(params.subspan(sh.prec_offset()), sh.prec_dims(), tape.prec, d_raw,
                         gspan.subspan(sh.prec_offset()), d_h);
  }
  if (sh.has_phi()) {
    const double phi = std::exp(smooth_clamp(tape.phi_raw));
    const double d_raw = lg.d_phi * phi * smooth_clamp_deriv(tape.phi_raw);
    detail::mlp_backward(params.subspan(sh.phi_offset()), sh.phi_dims(), tape.phi,
                         std::span<const double>(&d_raw, 1), gspan.subspan(sh.phi_offset()),
                         d_h);
  }
  detail::mlp_backward(params.subspan(sh.encoder_offset()), sh.encoder_dims(), tape.enc, d_h,
                       gspan.subspan(sh.encoder_offset()), {});
}

inline std::vector<double> backward(const CuNetwork& net, const ForwardTape& tape,
                                    const LossGradients& lg) {
  std::vector<double> grad(net.params.size(), 0.0);
  backward_into(net, tape, lg, grad);
  return grad;
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
inline CuNetwork init_params(const NetworkShape& shape, uint64_t seed) {
  CuNetwork net;
  net.shape = shape;
  net.seed = seed;
  net.params.assign(shape.param_count(), 0.0);
  SeededRng rng(seed, 0x6e6574u);  // net-init stream

  auto init_mlp = [&](size_t off, const MlpDims& dims) {
    size_t p = off;
    for (int l = 0; l < 4; ++l) {
      const int in = dims.s[l], out = dims.s[l + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      for (int i = 0; i < out * in; ++i) net.params[p + i] = rng.uniform(-limit, limit);
      p += static_cast<size_t>(out) * in + out;  // biases stay zero
    }
  };
  init_mlp(shape.encoder_offset(), shape.encoder_dims());
  init_mlp(shape.mu_offset(), shape.mu_dims());
  if (shape.has_prec()) init_mlp(shape.prec_offset(), shape.prec_dims());
  if (shape.has_phi()) init_mlp(shape.phi_offset(), shape.phi_dims());
  return net;
}

// --- checkpoint io: one JSON header line, then the raw double payload ---

inline void save_checkpoint(const CuNetwork& net, const std::string& path) {
  nlohmann::json h;
  h["format"] = "cu-checkpoint";
  h["version"] = 1;
  h["agents"] = net.shape.agents;
  h["timesteps"] = net.shape.timesteps;
  h["hidden"] = net.shape.hidden;
  h["family"] = loss_family_name(net.shape.family);
  h["input_scale"] = net.shape.input_scale;
  h["seed"] = net.seed;
  h["param_count"] = net.params.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write checkpoint: " + path);
  out << h.dump() << "\n";
  out.write(reinterpret_cast<const char*>(net.params.data()),
            static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (!out) throw IoFailure("short write on checkpoint: " + path);
}

inline CuNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open checkpoint: " + path);
  std::string header;
  if (!std::getline(in, header)) throw IoFailure("checkpoint missing header: " + path);
  nlohmann::json h = nlohmann::json::parse(header, nullptr, false);
  if (h.is_discarded() || h.value("format", "") != "cu-checkpoint")
    throw IoFailure("not a checkpoint file: " + path);
  CuNetwork net;
  net.shape.agents = h.at("agents").get<int>();
  net.shape.timesteps = h.at("timesteps").get<int>();
  net.shape.hidden = h.at("hidden").get<int>();
  net.shape.family = loss_family_from_name(h.at("family").get<std::string>());
  net.shape.input_scale = h.at("input_scale").get<double>();
  net.seed = h.at("seed").get<uint64_t>();
  const size_t n = h.at("param_count").get<size_t>();
  if (n != net.shape.param_count())
    throw IoFailure("checkpoint param count does not match dims: " + path);
  net.params.resize(n);
  in.read(reinterpret_cast<char*>(net.params.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<size_t>(in.gcount()) != n * sizeof(double))
    throw IoFailure("checkpoint payload truncated: " + path);
  return net;
}

}  // namespace cu
