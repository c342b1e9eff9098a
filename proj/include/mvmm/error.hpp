#pragma once

#include <stdexcept>
#include <string>

namespace mvmm {

// Error categories map 1:1 onto process exit codes at the CLI boundary.
enum class ErrorCode {
  validation = 1,  // bad inputs: config, file format, geometry mismatches
  numeric = 2,     // degenerate likelihoods, non-finite gradients
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_validation(const std::string& msg) {
  throw Error(ErrorCode::validation, msg);
}

[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorCode::numeric, msg);
}

}  // namespace mvmm
