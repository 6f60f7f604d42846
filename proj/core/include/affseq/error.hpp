// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace affseq {

/// Base of every error raised by the engine. The CLI maps each subclass to an
/// exit code (see tools/cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures: missing file, unreadable or unwritable path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its container structure is wrong (bad magic,
/// malformed header, bad version).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Valid container carrying a codec or layout the engine does not decode.
class UnsupportedEncodingError : public Error {
 public:
  using Error::Error;
};

/// Payload shorter than its header declares.
class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, std::size_t expected, std::size_t found)
      : Error(what + ": expected " + std::to_string(expected) + " bytes, found " +
              std::to_string(found)),
        expected_(expected),
        found_(found) {}

  std::size_t expected_bytes() const noexcept { return expected_; }
  std::size_t found_bytes() const noexcept { return found_; }

 private:
  std::size_t expected_;
  std::size_t found_;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Text field could not be parsed as the expected type.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's mathematical domain, or shape mismatch.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Required data (frame, track, modality) not present.
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced during computation.
class NumericFault : public Error {
 public:
  using Error::Error;
};

}  // namespace affseq
