#include "glyphforge/runtime.hpp"

#include <cstdlib>
#include <string>

#include "glyphforge/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace glyphforge {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 29);
#endif
}

std::size_t resolve_threads(std::optional<std::size_t> flag) {
  if (flag) {
    require(*flag >= 1, ErrorCode::invalid_argument, "--threads must be at least 1");
    return *flag;
  }
  const char* env = std::getenv("GLYPH_FORGE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    std::size_t used = 0;
    const long v = std::stol(env, &used);
    require(used == std::string(env).size() && v >= 1, ErrorCode::invalid_argument, "");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_argument, std::string("GLYPH_FORGE_THREADS must be a positive integer, got '") + env + "'");
  }
}

}  // namespace glyphforge
