#pragma once

#include <stdexcept>
#include <string>

namespace gncd {

// Base class for all library errors. Precondition violations raise
// std::invalid_argument directly; everything data-dependent derives from
// this so callers can tell "bad input file / numeric failure" apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IoErrorKind {
  kOpen,
  kBadHeader,
  kTruncated,
  kSizeMismatch,
  kNonFinite,
  kNonNormalizable,
  kBadCsv,
};

const char* to_string(IoErrorKind kind);

class IoError : public Error {
 public:
  IoError(IoErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

// Raised when a training or graph step produces NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace gncd
