#pragma once

#include <stdexcept>
#include <string>

namespace symgeom {

// Process exit codes used by the CLI.
enum class ErrorKind { usage = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

// Bad arguments or configuration.
class UsageError : public Error {
public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

// Malformed, missing or inconsistent input data.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Solver non-convergence, ill-conditioning and similar failures.
class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

} // namespace symgeom
