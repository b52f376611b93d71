#pragma once

#include <stdexcept>
#include <string>

namespace lagr {

/// Base of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct InvariantError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

/// Homography is (numerically) singular or has vanishing norm.
struct DegenerateTransform : Error { using Error::Error; };
/// Homogeneous third coordinate too close to zero to dehomogenize.
struct PointAtInfinity : Error { using Error::Error; };
/// Masked reduction over an empty valid region.
struct EmptyOverlap : Error { using Error::Error; };

/// Misuse of the differentiation API (e.g. backward from a non-scalar).
struct ContractError : Error { using Error::Error; };
/// Finite-difference oracle hit a non-finite evaluation.
struct OracleError : Error { using Error::Error; };

struct UndefinedCorrelation : Error { using Error::Error; };
/// Spectral error is identically zero, so no log-log slope exists.
struct UndefinedSlope : Error { using Error::Error; };

} // namespace lagr
