#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace cu {

/// Deterministic random source. All variate transforms are explicit and
/// consume a fixed number of engine draws per call, so generated streams
/// are stable across platforms and standard libraries.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : engine_(seed) {}

  /// Independent substream, e.g. one per dataset split or per epoch.
  SeededRng(uint64_t seed, uint64_t stream) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1]; safe under log().
  double uniform01_open_low() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller; exactly two engine draws per call.
  double normal() {
    const double u1 = uniform01_open_low();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Exponential with the given mean; one engine draw per call.
  double exponential(double mean) { return -mean * std::log(uniform01_open_low()); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cu
