#pragma once

#include <stdexcept>
#include <string>

namespace stargan {

/// Root of every exception thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain of a function (log of a non-positive number, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition that is not about shapes or domains.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Record-level data validation failure (manifest rows, annotations).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace stargan
