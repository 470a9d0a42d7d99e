#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace barnet {

/// Shapes or extents that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (bad factor, alpha outside [0,1], unknown key, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Label data outside the declared class range, missing files, refused overwrites.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward op produced NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated file; carries the byte offset where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace barnet
