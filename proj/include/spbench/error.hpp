#pragma once

#include <stdexcept>
#include <string>

namespace spbench {

/// Failure classes; each maps to a distinct CLI exit status.
enum class ErrorKind { config = 2, data = 3, training = 4, io = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Raised when filtering leaves nothing, so callers can tell over-filtering apart.
struct EmptyResultError : DataError {
  explicit EmptyResultError(const std::string& what) : DataError("empty result: " + what) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error(ErrorKind::training, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace spbench
