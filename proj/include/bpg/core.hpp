#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bpg {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input (shape mismatch, bad probabilities, bad config field).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The induced state-action chain is not irreducible and aperiodic.
class ErgodicityError : public Error {
 public:
  using Error::Error;
};

/// A linear system that must be nonsingular was not.
class SingularError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an experiment does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

namespace detail {

/// Short human-readable number for diagnostics.
inline std::string num(double x) {
  std::ostringstream os;
  os.precision(12);
  os << x;
  return os.str();
}

/// Round-trip representation (17 significant digits).
inline std::string num17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace detail
}  // namespace bpg
