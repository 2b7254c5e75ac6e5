#pragma once

#include <stdexcept>
#include <string>

namespace situ {

// Failure classes map one-to-one onto the CLI exit codes.
enum class ErrorKind { Usage = 2, Validation = 3, Numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

}  // namespace situ
