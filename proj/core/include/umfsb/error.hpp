#pragma once

#include <stdexcept>
#include <string>

namespace umfsb {

// Base of every error thrown by the library. The category maps onto the
// CLI exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  enum class Kind { kConfig, kData, kNumeric, kShape, kInvalidArgument };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Kind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Kind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Kind::kNumeric, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(Kind::kShape, what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(Kind::kInvalidArgument, what) {}
};

}  // namespace umfsb
