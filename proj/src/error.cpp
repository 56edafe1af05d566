#include "glyphforge/error.hpp"

namespace glyphforge {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::bad_version: return "bad version";
    case ErrorCode::truncated: return "truncated tensor data";
    case ErrorCode::missing_file: return "missing file";
    case ErrorCode::unknown_label: return "unknown label";
    case ErrorCode::duplicate_id: return "duplicate instance id";
    case ErrorCode::schema: return "schema violation";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::invalid_state: return "invalid state";
  }
  return "error";
}

}  // namespace glyphforge
