#include "glyphforge/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace glyphforge {

GradCheckResult grad_check(const std::function<Probe()>& objective, std::span<const GradCheckTarget> targets,
                           double epsilon) {
  require(epsilon > 0.0, ErrorCode::invalid_argument, "grad_check: epsilon must be positive");
  GradCheckResult result;
  const Probe base = objective();
  require(std::isfinite(base.loss), ErrorCode::non_finite, "grad_check: objective is not finite");

  for (const auto& target : targets) {
    require(target.values->shape() == target.analytic->shape(), ErrorCode::shape_mismatch,
            "grad_check: gradient of '" + target.name + "' has shape " + shape_str(target.analytic->shape()) +
                ", expected " + shape_str(target.values->shape()));
    for (std::size_t i = 0; i < target.values->size(); ++i) {
      double& v = (*target.values)[i];
      const double saved = v;
      v = saved + epsilon;
      const Probe plus = objective();
      v = saved - epsilon;
      const Probe minus = objective();
      v = saved;
      require(std::isfinite(plus.loss) && std::isfinite(minus.loss), ErrorCode::non_finite,
              "grad_check: objective is not finite near " + target.name);
      const double a = (*target.analytic)[i];
      require(std::isfinite(a), ErrorCode::non_finite, "grad_check: analytic gradient of " + target.name);
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++result.skipped;
        continue;
      }
      const double fd = (plus.loss - minus.loss) / (2.0 * epsilon);
      const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = target.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace glyphforge
