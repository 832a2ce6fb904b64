#pragma once

#include <stdexcept>
#include <string>

namespace mtda {

/// Failure categories. The CLI maps each one to its own exit code.
enum class ErrorKind { usage = 1, data = 2, backend = 3 };

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

/// Bad arguments, violated preconditions.
class UsageError : public Error {
  public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Malformed or inconsistent input data.
class DataError : public Error {
  public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Translator / estimator failures after retries.
class BackendError : public Error {
  public:
    enum class Reason { transport, timeout, protocol, too_long };

    BackendError(Reason reason, const std::string& what)
        : Error(ErrorKind::backend, what), reason_(reason) {}

    Reason reason() const noexcept { return reason_; }

  private:
    Reason reason_;
};

} // namespace mtda
