#pragma once

#include <cmath>
#include <cstdint>

#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge::testing {

template <class T>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

template <class T>
double sum_product(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace glyphforge::testing
