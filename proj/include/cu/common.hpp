#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cu/errors.hpp"

namespace cu {

enum class Family { Gaussian, Laplace };

inline std::string family_name(Family f) {
  return f == Family::Gaussian ? "gaussian" : "laplace";
}

inline Family family_from_name(const std::string& s) {
  if (s == "gaussian") return Family::Gaussian;
  if (s == "laplace") return Family::Laplace;
  throw InvalidManifest("unknown family: " + s);
}

/// Dense row-major matrix, sized for the small problems in this library
/// (agent counts of a few, MLP layers of a few hundred).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
};

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace cu
