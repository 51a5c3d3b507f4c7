#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssilab {

/// Base class for every error raised by the analysis engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised when an input path does not exist. The CLI maps this to exit status 2.
class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncationError : public FormatError {
 public:
  TruncationError(const std::string& what, std::uint64_t offset)
      : FormatError(what), offset_(offset) {}
  [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Invalid values in otherwise well-formed input (NaN payloads, zero token counts).
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssilab
