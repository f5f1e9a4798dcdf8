#pragma once

#include <stdexcept>
#include <string>

namespace dca {

enum class ErrorKind { config, data, dimension, numeric, state, proposal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
// Malformed or inconsistent input data, including file-format errors.
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::state, w) {}
};
struct ProposalError : Error {
  explicit ProposalError(const std::string& w) : Error(ErrorKind::proposal, w) {}
};

// Process exit code for the command-line tool: 1 config, 2 data/format, 3 numeric.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
      return 1;
    case ErrorKind::numeric:
      return 3;
    default:
      return 2;
  }
}

}  // namespace dca
