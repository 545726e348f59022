#pragma once

#include <stdexcept>
#include <string>

namespace nisim {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  usage,        ///< a precondition on caller-supplied parameters was violated
  data_format,  ///< an input object (file, matrix, pmf) is malformed
  numeric,      ///< an internal numerical consistency check failed
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string context = {})
      : std::runtime_error(message), kind_(kind), context_(std::move(context)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorKind kind_;
  std::string context_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message, std::string context = {})
      : Error(ErrorKind::usage, message, std::move(context)) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message, std::string context = {})
      : Error(ErrorKind::data_format, message, std::move(context)) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message, std::string context = {})
      : Error(ErrorKind::numeric, message, std::move(context)) {}
};

}  // namespace nisim
