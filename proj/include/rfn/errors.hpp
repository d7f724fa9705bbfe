#pragma once

#include <stdexcept>
#include <string>

namespace rfn {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shapes do not line up for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index refers outside the valid id range of a container or graph.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A label is not part of the configured vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Degenerate or unusable spatial geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or run configuration, detected at build time.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A file references an entity that does not exist.
class ReferentialError : public Error {
 public:
  using Error::Error;
};

/// A file carries an unsupported format version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfn
