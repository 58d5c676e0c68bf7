#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace occkit {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Coordinates outside the voxel volume.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Operands with incompatible geometry or tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a type invariant (unnormalized distribution, bad label...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed container bytes. Carries the byte offset of the offending field.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Payload shorter or longer than its header announces.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure (missing input, unwritable output).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace occkit
