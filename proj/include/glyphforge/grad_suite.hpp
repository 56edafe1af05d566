#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glyphforge/grad_check.hpp"

namespace glyphforge {

struct SuiteCheck {
  std::string name;  // layer or composite under test
  std::uint64_t seed = 0;
  GradCheckResult result;
  double tolerance = 0.0;

  bool passed() const { return result.checked > 0 && result.max_relative_error < tolerance; }
};

/// 64-bit finite-difference checks of every layer and the focal loss over
/// `seeds` random draws (first_seed onward), the conv/relu/batchnorm stack, the focal head on a
/// toy network, and the whole classifier on a 2x1x8x8 toy batch.
std::vector<SuiteCheck> run_gradient_suite(std::size_t seeds = 10, double epsilon = 1e-4, std::uint64_t first_seed = 0);

}  // namespace glyphforge
