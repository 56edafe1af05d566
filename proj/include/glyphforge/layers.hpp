#pragma once

#include <cstdint>
#include <vector>

#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge {

enum class Mode { train, eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---- convolution: 3x3 kernels, padding 1, stride 1 ------------------------

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias);

template <class T>
struct Conv2dGrads {
  BasicTensor<T> d_input;  // empty when not requested
  BasicTensor<T> d_kernels;
  BasicTensor<T> d_bias;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                               const BasicTensor<T>& d_output, bool need_input_grad = true);

// ---- 2x2 max pooling -------------------------------------------------------

template <class T>
struct PoolResult {
  BasicTensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

template <class T>
PoolResult<T> maxpool2d_forward(const BasicTensor<T>& input);

template <class T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                  const BasicTensor<T>& d_output);

// ---- batch normalization over (N, H, W) per channel ------------------------

template <class T>
struct RunningStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;

  bool initialized() const noexcept { return !mean.empty(); }
  static RunningStats identity(std::size_t channels) {
    return {BasicTensor<T>({channels}, T{0}), BasicTensor<T>({channels}, T{1})};
  }
};

template <class T>
struct BatchNormCache {
  Mode mode = Mode::train;
  BasicTensor<T> normalized;  // x_hat
  std::vector<T> inv_std;
};

// Train mode normalizes with biased batch variance and, when stats is
// non-null, folds the batch statistics into it (momentum 0.1, unbiased
// variance). Eval mode reads stats only.
template <class T>
BasicTensor<T> batchnorm2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& scale,
                                   const BasicTensor<T>& shift, RunningStats<T>* stats, Mode mode,
                                   BatchNormCache<T>* cache = nullptr);

/// Eval-mode normalization with fixed running statistics.
template <class T>
BasicTensor<T> batchnorm2d_eval(const BasicTensor<T>& input, const BasicTensor<T>& scale, const BasicTensor<T>& shift,
                                const RunningStats<T>& stats);

template <class T>
struct BatchNormGrads {
  BasicTensor<T> d_input;
  BasicTensor<T> d_scale;
  BasicTensor<T> d_shift;
};

template <class T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormCache<T>& cache, const BasicTensor<T>& scale,
                                       const BasicTensor<T>& d_output);

// ---- elementwise -----------------------------------------------------------

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

// Subgradient at exactly 0 is 0.
template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& d_output);

template <class T>
struct DropoutResult {
  BasicTensor<T> output;
  std::vector<T> mask;  // per-element multiplier, empty in eval mode
};

// Inverted dropout: survivors are scaled by 1/(1-p) so eval is the identity.
template <class T>
DropoutResult<T> dropout_forward(const BasicTensor<T>& input, double p, Mode mode, Rng& rng);

template <class T>
BasicTensor<T> dropout_backward(const std::vector<T>& mask, const BasicTensor<T>& d_output);

// ---- fully connected: y = x W^T + b ----------------------------------------

template <class T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias);

template <class T>
struct LinearGrads {
  BasicTensor<T> d_input;
  BasicTensor<T> d_weights;
  BasicTensor<T> d_bias;
};

template <class T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& d_output, bool need_input_grad = true);

}  // namespace glyphforge
