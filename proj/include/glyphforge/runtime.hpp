#pragma once

#include <cstddef>
#include <optional>

namespace glyphforge {

/// Keeps large activation buffers on the heap instead of mmap/munmap churn
/// between training steps. No-op outside glibc.
void tune_allocator();

/// --threads value, else GLYPH_FORGE_THREADS, else 1.
std::size_t resolve_threads(std::optional<std::size_t> flag);

}  // namespace glyphforge
