#pragma once

#include <stdexcept>

namespace ulab {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };       // invalid configuration
struct ShapeError : Error { using Error::Error; };        // dimension mismatch
struct UsageError : Error { using Error::Error; };        // caller broke a precondition
struct FormatError : Error { using Error::Error; };       // malformed input file
struct DivergenceError : Error { using Error::Error; };   // non-finite loss while training
struct NumericError : Error { using Error::Error; };      // iteration failed to converge

// Conditions specific to the reweight/tilt pipeline.
struct DegenerateMassError : Error { using Error::Error; };      // p(f) ~ 1
struct DegenerateGeometryError : Error { using Error::Error; };  // zero-norm projection
struct OutOfHullError : Error { using Error::Error; };           // moment target outside score hull
struct InvalidInputError : Error { using Error::Error; };

}  // namespace ulab
