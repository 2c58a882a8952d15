#pragma once

#include <stdexcept>
#include <string>

namespace streambayes {

enum class ErrorCode {
  Usage,
  Config,
  Io,
  Parse,
  Schema,
  Type,
  Order,
  Structure,
  Validation,
  MissingValue,
  UnknownVariable,
  InvalidParameter,
  Domain,
  Conjugacy,
  TooLarge,
  EmptyModel,
  DegenerateEvidence,
  Numerical,
  UndefinedVarianceMean,
};

const char* error_code_name(ErrorCode code) noexcept;

// All library failures surface as this exception; the code is the stable part.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace streambayes
