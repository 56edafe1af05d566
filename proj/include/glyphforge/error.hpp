#pragma once

#include <stdexcept>
#include <string>

namespace glyphforge {

enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  non_finite,
  // model file
  bad_magic,
  bad_version,
  truncated,
  // corpus / manifest
  missing_file,
  unknown_label,
  duplicate_id,
  schema,
  io,
  // tape misuse, state errors
  invalid_state,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace glyphforge
