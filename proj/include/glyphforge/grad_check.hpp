#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/tensor.hpp"

namespace glyphforge {

/// One evaluation of the scalar objective at the current parameter values.
struct Probe {
  double loss = 0.0;
  std::uint64_t signature = 0;  // activation pattern; see Tape::activation_signature
};

struct GradCheckTarget {
  std::string name;
  TensorD* values;          // perturbed in place and restored
  const TensorD* analytic;  // gradient of the objective w.r.t. values
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "<target>[<index>]"
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbations that changed the activation pattern
};

/// Central differences against analytic gradients:
/// max |a - fd| / max(|a|, |fd|, 1e-8) over every element of every target.
/// Elements whose +/- perturbation crosses a ReLU or pooling kink (the
/// signature changes) are skipped and counted.
GradCheckResult grad_check(const std::function<Probe()>& objective, std::span<const GradCheckTarget> targets,
                           double epsilon = 1e-4);

}  // namespace glyphforge
