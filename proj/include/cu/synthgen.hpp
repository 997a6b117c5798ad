#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cu/common.hpp"
#include "cu/distributions.hpp"
#include "cu/errors.hpp"
#include "cu/linalg.hpp"
#include "cu/rng.hpp"

namespace cu {

constexpr const char* kGeneratorVersion = "1.0";
constexpr int kDatasetFormatVersion = 1;

enum class TrajectoryRole { MeanGt, NoisyObservation };

struct TrajectoryBatch {
  int agents = 3;
  int timesteps = 50;
  std::vector<double> coords;  // [agents][timesteps][2]
  TrajectoryRole role = TrajectoryRole::MeanGt;

  TrajectoryBatch() = default;
  TrajectoryBatch(int m, int t, TrajectoryRole r)
      : agents(m), timesteps(t), coords(static_cast<size_t>(m) * t * 2, 0.0), role(r) {}

  double& at(int a, int t, int ax) {
    return coords[(static_cast<size_t>(a) * timesteps + t) * 2 + ax];
  }
  double at(int a, int t, int ax) const {
    return coords[(static_cast<size_t>(a) * timesteps + t) * 2 + ax];
  }
};

struct MeanMotionConfig {
  double position_halfwidth = 10.0;  // start positions uniform in [-hw, hw]^2
  double speed_min = 0.05;           // per-step displacement magnitude
  double speed_max = 0.5;
};

struct SplitSizes {
  int train = 36000;
  int val = 7000;
  int test = 7000;

  int of(int split) const { return split == 0 ? train : (split == 1 ? val : test); }
};

inline const char* split_name(int split) {
  return split == 0 ? "train" : (split == 1 ? "val" : "test");
}

struct DatasetManifest {
  Family family = Family::Gaussian;
  SquareMatrix sigma_gt;  // agents x agents
  double lambda = 1.0;
  uint64_t seed = 0;
  SplitSizes splits;
  MeanMotionConfig mean_motion;
  int agents = 3;
  int timesteps = 50;
  std::string generator_version = kGeneratorVersion;
  int format_version = kDatasetFormatVersion;
  std::string digest;  // set by generate_dataset
};

struct Instance {
  TrajectoryBatch x;      // noisy observation
  TrajectoryBatch mu_gt;  // ground-truth mean
  std::vector<double> epsilon;  // x - mu_gt, exact
};

/// Random ground-truth covariance: scale * (A A^T / m + 0.5 I) with A i.i.d.
/// standard normal. Positive definite with nonzero off-diagonals, so the
/// generated noise always carries cross-agent correlation.
inline SquareMatrix make_sigma_gt(uint64_t seed, int m = 3, double scale = 1.0) {
  if (!(scale > 0.0)) throw InvalidManifest("make_sigma_gt: scale must be positive");
  SeededRng rng(seed, 0x5347u);
  std::vector<double> a(static_cast<size_t>(m) * m);
  for (double& v : a) v = rng.normal();
  SquareMatrix s(m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (int k = 0; k < m; ++k)
        acc += a[static_cast<size_t>(i) * m + k] * a[static_cast<size_t>(j) * m + k];
      double v = scale * (acc / m + (i == j ? 0.5 : 0.0));
      s.at(i, j) = v;
      s.at(j, i) = v;
    }
  return s;
}

namespace detail {

// Snapping start position and velocity to a dyadic grid makes every
// p0 + t*v exact in double arithmetic, so second differences vanish
// exactly and the straight-line contract is testable bitwise.
inline double quantize(double v) { return std::round(v * 0x1p20) * 0x1p-20; }

}  // namespace detail

/// Constant-velocity 2-D trajectories: position(t) = p0 + t*v per agent,
/// start positions uniform in the box, headings uniform, speeds uniform in
/// the configured range.
inline TrajectoryBatch generate_mean(const MeanMotionConfig& cfg, int agents, int timesteps,
                                     SeededRng& rng) {
  TrajectoryBatch traj(agents, timesteps, TrajectoryRole::MeanGt);
  for (int a = 0; a < agents; ++a) {
    const double p0x = detail::quantize(rng.uniform(-cfg.position_halfwidth, cfg.position_halfwidth));
    const double p0y = detail::quantize(rng.uniform(-cfg.position_halfwidth, cfg.position_halfwidth));
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double vx = detail::quantize(speed * std::cos(heading));
    const double vy = detail::quantize(speed * std::sin(heading));
    for (int t = 0; t < timesteps; ++t) {
      traj.at(a, t, 0) = p0x + static_cast<double>(t) * vx;
      traj.at(a, t, 1) = p0y + static_cast<double>(t) * vy;
    }
  }
  return traj;
}

/// One sample: straight-line means plus per-(timestep, axis) noise 3-vectors
/// drawn across agents from the manifest's distribution. The noisy coords and
/// the stored epsilon satisfy x == mu_gt + epsilon exactly.
inline Instance generate_instance(const DatasetManifest& manifest, SeededRng& rng) {
  const int m = manifest.agents, T = manifest.timesteps;
  Instance inst;
  inst.mu_gt = generate_mean(manifest.mean_motion, m, T, rng);
  inst.x = TrajectoryBatch(m, T, TrajectoryRole::NoisyObservation);
  inst.epsilon.assign(static_cast<size_t>(m) * T * 2, 0.0);

  const bool zero_noise = max_abs(manifest.sigma_gt) == 0.0;
  std::optional<PrecisionFactor> cov_factor;
  if (!zero_noise) cov_factor = ldl_factorize(manifest.sigma_gt);

  std::vector<double> eps(m), w(m);
  for (int t = 0; t < T; ++t) {
    for (int ax = 0; ax < 2; ++ax) {
      if (zero_noise) {
        std::fill(eps.begin(), eps.end(), 0.0);
      } else {
        const double scale = manifest.family == Family::Laplace
                                 ? std::sqrt(rng.exponential(manifest.lambda))
                                 : 1.0;
        for (int i = 0; i < m; ++i)
          w[i] = scale * std::exp(0.5 * cov_factor->log_diag[i]) * rng.normal();
        detail::apply_l(*cov_factor, w, eps);
      }
      for (int a = 0; a < m; ++a) {
        const double mu = inst.mu_gt.at(a, t, 0 + ax);
        double x = mu + eps[a];
        double e = x - mu;
        // settle on a representable pair with both identities exact
        for (int it = 0; it < 4 && mu + e != x; ++it) {
          x = mu + e;
          e = x - mu;
        }
        inst.x.at(a, t, ax) = x;
        inst.epsilon[(static_cast<size_t>(a) * T + t) * 2 + ax] = e;
      }
    }
  }
  return inst;
}

// --- serialization ---

namespace detail {

inline void append_number(std::string& buf, double v) {
  char tmp[40];
  std::snprintf(tmp, sizeof(tmp), "%.17g", v);
  buf += tmp;
}

inline void append_trajectory(std::string& buf, const TrajectoryBatch& t) {
  buf += '[';
  for (int a = 0; a < t.agents; ++a) {
    if (a) buf += ',';
    buf += '[';
    for (int s = 0; s < t.timesteps; ++s) {
      if (s) buf += ',';
      buf += '[';
      append_number(buf, t.at(a, s, 0));
      buf += ',';
      append_number(buf, t.at(a, s, 1));
      buf += ']';
    }
    buf += ']';
  }
  buf += ']';
}

inline std::string record_line(const Instance& inst) {
  std::string buf;
  buf.reserve(16000);
  buf += "{\"mu_gt\":";
  append_trajectory(buf, inst.mu_gt);
  buf += ",\"x\":";
  append_trajectory(buf, inst.x);
  buf += "}";
  return buf;
}

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const char* data, size_t n, uint64_t h) {
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64_file(const std::filesystem::path& path, uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open for digest: " + path.string());
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char tmp[20];
  std::snprintf(tmp, sizeof(tmp), "%016llx", static_cast<unsigned long long>(v));
  return tmp;
}

}  // namespace detail

/// FNV-1a over the three split files in train/val/test order.
inline std::string dataset_digest(const std::filesystem::path& dir) {
  uint64_t h = detail::kFnvOffset;
  for (int split = 0; split < 3; ++split)
    h = detail::fnv1a64_file(dir / (std::string(split_name(split)) + ".jsonl"), h);
  return "fnv1a64:" + detail::hex64(h);
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["family"] = family_name(m.family);
  j["agents"] = m.agents;
  j["timesteps"] = m.timesteps;
  j["sigma_gt"] = m.sigma_gt.e;
  j["lambda"] = m.lambda;
  j["seed"] = m.seed;
  j["splits"] = {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}};
  j["mean_motion"] = {{"position_halfwidth", m.mean_motion.position_halfwidth},
                      {"speed_min", m.mean_motion.speed_min},
                      {"speed_max", m.mean_motion.speed_max}};
  j["generator_version"] = m.generator_version;
  j["format_version"] = m.format_version;
  j["digest"] = m.digest;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.family = family_from_name(j.at("family").get<std::string>());
    m.agents = j.at("agents").get<int>();
    m.timesteps = j.at("timesteps").get<int>();
    m.lambda = j.at("lambda").get<double>();
    m.seed = j.at("seed").get<uint64_t>();
    m.splits.train = j.at("splits").at("train").get<int>();
    m.splits.val = j.at("splits").at("val").get<int>();
    m.splits.test = j.at("splits").at("test").get<int>();
    m.mean_motion.position_halfwidth = j.at("mean_motion").at("position_halfwidth").get<double>();
    m.mean_motion.speed_min = j.at("mean_motion").at("speed_min").get<double>();
    m.mean_motion.speed_max = j.at("mean_motion").at("speed_max").get<double>();
    m.generator_version = j.at("generator_version").get<std::string>();
    m.format_version = j.at("format_version").get<int>();
    m.digest = j.at("digest").get<std::string>();
    const auto sig = j.at("sigma_gt").get<std::vector<double>>();
    if (static_cast<int>(sig.size()) != m.agents * m.agents)
      throw InvalidManifest("manifest: sigma_gt size mismatch");
    m.sigma_gt = SquareMatrix(m.agents);
    m.sigma_gt.e = sig;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidManifest(std::string("manifest: ") + e.what());
  }
  if (m.splits.train <= 0 || m.splits.val <= 0 || m.splits.test <= 0)
    throw InvalidManifest("manifest: split sizes must be positive");
  if (!(m.lambda > 0.0)) throw InvalidManifest("manifest: lambda must be positive");
  return m;
}

/// Writes train/val/test record files plus the manifest (with its integrity
/// digest) into dir. Each split runs on its own seed-derived stream, so
/// changing one split's size never alters another split's instances.
/// Returns the digest.
inline std::string generate_dataset(DatasetManifest manifest,
                                    const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create dataset dir: " + dir.string());

  for (int split = 0; split < 3; ++split) {
    const auto path = dir / (std::string(split_name(split)) + ".jsonl");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot write: " + path.string());
    SeededRng rng(manifest.seed, static_cast<uint64_t>(split));
    const int count = manifest.splits.of(split);
    for (int i = 0; i < count; ++i) {
      const Instance inst = generate_instance(manifest, rng);
      out << detail::record_line(inst) << "\n";
    }
    if (!out) throw IoFailure("short write: " + path.string());
  }
  manifest.digest = dataset_digest(dir);
  std::ofstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw IoFailure("cannot write manifest");
  mf << manifest_to_json(manifest).dump(2) << "\n";
  return manifest.digest;
}

/// Manifest load + integrity check against the split files.
inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoFailure("cannot open manifest in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InvalidManifest("manifest is not valid JSON");
  DatasetManifest m = manifest_from_json(j);
  const std::string actual = dataset_digest(dir);
  if (actual != m.digest)
    throw ManifestMismatch("dataset digest " + actual + " != manifest digest " + m.digest);
  return m;
}

/// Streaming reader over one split file; validates shape per record.
class RecordReader {
 public:
  RecordReader(const std::filesystem::path& path, int agents, int timesteps)
      : in_(path, std::ios::binary), path_(path.string()), agents_(agents), timesteps_(timesteps) {
    if (!in_) throw IoFailure("cannot open split: " + path_);
  }

  std::optional<Instance> next() {
    std::string line;
    if (!std::getline(in_, line)) return std::nullopt;
    ++line_;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw CorruptRecord(path_ + ":" + std::to_string(line_) + ": invalid JSON");
    Instance inst;
    inst.mu_gt = parse_trajectory(j, "mu_gt", TrajectoryRole::MeanGt);
    inst.x = parse_trajectory(j, "x", TrajectoryRole::NoisyObservation);
    inst.epsilon.resize(inst.x.coords.size());
    for (size_t i = 0; i < inst.epsilon.size(); ++i)
      inst.epsilon[i] = inst.x.coords[i] - inst.mu_gt.coords[i];
    return inst;
  }

  int line() const { return line_; }

 private:
  TrajectoryBatch parse_trajectory(const nlohmann::json& j, const char* key,
                                   TrajectoryRole role) {
    const std::string where = path_ + ":" + std::to_string(line_);
    if (!j.contains(key)) throw CorruptRecord(where + ": missing " + key);
    const nlohmann::json& arr = j[key];
    if (!arr.is_array() || static_cast<int>(arr.size()) != agents_)
      throw CorruptRecord(where + ": " + key + " must have " + std::to_string(agents_) +
                          " agents");
    TrajectoryBatch t(agents_, timesteps_, role);
    for (int a = 0; a < agents_; ++a) {
      const nlohmann::json& rows = arr[a];
      if (!rows.is_array() || static_cast<int>(rows.size()) != timesteps_)
        throw CorruptRecord(where + ": " + key + " agent " + std::to_string(a) + " must have " +
                            std::to_string(timesteps_) + " timesteps");
      for (int s = 0; s < timesteps_; ++s) {
        const nlohmann::json& pt = rows[s];
        if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
          throw CorruptRecord(where + ": " + key + " points must be [x,y]");
        t.at(a, s, 0) = pt[0].get<double>();
        t.at(a, s, 1) = pt[1].get<double>();
        if (!std::isfinite(t.at(a, s, 0)) || !std::isfinite(t.at(a, s, 1)))
          throw CorruptRecord(where + ": non-finite coordinate");
      }
    }
    return t;
  }

  std::ifstream in_;
  std::string path_;
  int agents_, timesteps_;
  int line_ = 0;
};

/// Materialize one split; record count must match the manifest.
inline std::vector<Instance> load_split(const std::filesystem::path& dir,
                                        const DatasetManifest& manifest, int split) {
  const auto path = dir / (std::string(split_name(split)) + ".jsonl");
  RecordReader reader(path, manifest.agents, manifest.timesteps);
  std::vector<Instance> out;
  out.reserve(manifest.splits.of(split));
  while (auto inst = reader.next()) out.push_back(std::move(*inst));
  if (static_cast<int>(out.size()) != manifest.splits.of(split))
    throw CorruptRecord(path.string() + ": expected " +
                        std::to_string(manifest.splits.of(split)) + " records, found " +
                        std::to_string(out.size()));
  return out;
}

}  // namespace cu
