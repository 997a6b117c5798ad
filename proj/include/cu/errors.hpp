#pragma once

#include <stdexcept>
#include <string>

namespace cu {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numeric / shape errors
struct DimensionMismatch : Error { using Error::Error; };
struct NotPositiveDefinite : Error { using Error::Error; };
struct NotSymmetric : Error { using Error::Error; };
struct IllConditioned : Error { using Error::Error; };
struct UnsupportedOrder : Error { using Error::Error; };
struct DegenerateRadius : Error { using Error::Error; };
struct NonPositivePhi : Error { using Error::Error; };
struct NonPositiveQ : Error { using Error::Error; };

// loss / training errors
struct FamilyMismatch : Error { using Error::Error; };
struct EmptyBatch : Error { using Error::Error; };
struct TapeMismatch : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct DivergedLoss : Error { using Error::Error; };
struct DatasetFamilyMismatch : Error { using Error::Error; };

// dataset / io errors
struct IoFailure : Error { using Error::Error; };
struct InvalidManifest : Error { using Error::Error; };
struct CorruptRecord : Error { using Error::Error; };
struct ManifestMismatch : Error { using Error::Error; };

}  // namespace cu
