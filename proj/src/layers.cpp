#include "glyphforge/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "glyphforge/gemm.hpp"

namespace glyphforge {
namespace {

constexpr std::size_t kKernel = 3;

// Eight interleaved double accumulators combined in a fixed tree, so the
// result depends only on the sequence of values added.
struct LaneSum {
  double lane[8] = {};

  template <class T>
  void add(const T* p, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
      for (std::size_t j = 0; j < 8; ++j) lane[j] += static_cast<double>(p[i + j]);
    for (std::size_t j = 0; i + j < n; ++j) lane[j] += static_cast<double>(p[i + j]);
  }

  template <class T>
  void add_squared_deviation(const T* p, std::size_t n, double mean) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
      for (std::size_t j = 0; j < 8; ++j) {
        const double d = static_cast<double>(p[i + j]) - mean;
        lane[j] += d * d;
      }
    for (std::size_t j = 0; i + j < n; ++j) {
      const double d = static_cast<double>(p[i + j]) - mean;
      lane[j] += d * d;
    }
  }

  template <class T>
  void add_product(const T* a, const T* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
      for (std::size_t j = 0; j < 8; ++j) lane[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    for (std::size_t j = 0; i + j < n; ++j) lane[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
  }

  double total() const {
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  }
};

// Row sums of a rows x cols matrix added into out; each row in ascending order.
template <class T>
void add_row_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  std::size_t r = 0;
  for (; r + 8 <= rows; r += 8) {
    T acc[8];
    for (std::size_t j = 0; j < 8; ++j) acc[j] = out[r + j];
    for (std::size_t i = 0; i < cols; ++i)
      for (std::size_t j = 0; j < 8; ++j) acc[j] += m[(r + j) * cols + i];
    for (std::size_t j = 0; j < 8; ++j) out[r + j] = acc[j];
  }
  for (; r < rows; ++r) {
    T a = out[r];
    for (std::size_t i = 0; i < cols; ++i) a += m[r * cols + i];
    out[r] = a;
  }
}

// cols[(c*9 + kh*3 + kw)][(h*W + w)]
template <class T>
void im2col(const T* image, std::size_t C, std::size_t H, std::size_t W, T* cols) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = image + c * HW;
    for (std::size_t kh = 0; kh < kKernel; ++kh) {
      for (std::size_t kw = 0; kw < kKernel; ++kw) {
        T* out = cols + ((c * kKernel + kh) * kKernel + kw) * HW;
        // Output columns w in [w0, w1) read source column w + kw - 1.
        const std::size_t w0 = kw == 0 ? 1 : 0, w1 = kw == 2 ? W - 1 : W;
        for (std::size_t h = 0; h < H; ++h) {
          T* dst = out + h * W;
          const std::size_t y = h + kh;
          if (y < 1 || y > H) {
            std::fill(dst, dst + W, T{0});
            continue;
          }
          const T* src = plane + (y - 1) * W;
          if (w0 > 0) dst[0] = T{0};
          for (std::size_t w = w0; w < w1; ++w) dst[w] = src[w + kw - 1];
          if (w1 < W) dst[W - 1] = T{0};
        }
      }
    }
  }
}

// rows[(h*W + w)][(c*9 + kh*3 + kw)]; one row per output pixel.
template <class T>
void im2row(const T* image, std::size_t C, std::size_t H, std::size_t W, T* rows, std::vector<T>& scratch) {
  scratch.resize(C * kKernel * kKernel * H * W);
  im2col(image, C, H, W, scratch.data());
  detail::transpose(C * kKernel * kKernel, H * W, scratch.data(), rows);
}

template <class T>
void col2im_add(const T* cols, std::size_t C, std::size_t H, std::size_t W, T* image) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    T* plane = image + c * HW;
    for (std::size_t kh = 0; kh < kKernel; ++kh) {
      for (std::size_t kw = 0; kw < kKernel; ++kw) {
        const T* src = cols + ((c * kKernel + kh) * kKernel + kw) * HW;
        const std::size_t w0 = kw == 0 ? 1 : 0, w1 = kw == 2 ? W - 1 : W;
        for (std::size_t h = 0; h < H; ++h) {
          const std::size_t y = h + kh;
          if (y < 1 || y > H) continue;
          T* dst = plane + (y - 1) * W;
          const T* s = src + h * W;
          for (std::size_t w = w0; w < w1; ++w) dst[w + kw - 1] += s[w];
        }
      }
    }
  }
}

template <class T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias) {
  expect_rank("conv2d input", input.shape(), 4);
  expect_rank("conv2d kernels", kernels.shape(), 4);
  expect_rank("conv2d bias", bias.shape(), 1);
  expect_extent("conv2d", "kernel height", kernels.dim(2), kKernel);
  expect_extent("conv2d", "kernel width", kernels.dim(3), kKernel);
  expect_extent("conv2d", "input channels", input.dim(1), kernels.dim(1));
  expect_extent("conv2d", "bias", bias.dim(0), kernels.dim(0));
}

}  // namespace

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias) {
  check_conv_shapes(input, kernels, bias);
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t K = kernels.dim(0), HW = H * W, CK = C * kKernel * kKernel;
  BasicTensor<T> out({B, K, H, W});
  std::vector<T> cols(CK * HW);
  for (std::size_t n = 0; n < B; ++n) {
    im2col(input.data() + n * C * HW, C, H, W, cols.data());
    T* dst = out.data() + n * K * HW;
    for (std::size_t k = 0; k < K; ++k) std::fill(dst + k * HW, dst + (k + 1) * HW, bias[k]);
    detail::gemm_accumulate(K, HW, CK, kernels.data(), CK, cols.data(), HW, dst, HW);
  }
  return out;
}

template <class T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                               const BasicTensor<T>& d_output, bool need_input_grad) {
  check_conv_shapes(input, kernels, BasicTensor<T>({kernels.dim(0)}));
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t K = kernels.dim(0), HW = H * W, CK = C * kKernel * kKernel;
  expect_rank("conv2d backward d_output", d_output.shape(), 4);
  expect_extent("conv2d backward", "batch", d_output.dim(0), B);
  expect_extent("conv2d backward", "output channels", d_output.dim(1), K);
  expect_extent("conv2d backward", "height", d_output.dim(2), H);
  expect_extent("conv2d backward", "width", d_output.dim(3), W);

  Conv2dGrads<T> g;
  g.d_kernels = BasicTensor<T>(kernels.shape());
  g.d_bias = BasicTensor<T>({K});
  if (need_input_grad) g.d_input = BasicTensor<T>(input.shape());

  // Narrow reductions (first layer, CK = 9) vectorize better as
  // dK^T[CK x K] += cols[CK x HW] * dy^T[HW x K]; either way each element
  // sums over (image, pixel) in ascending order.
  const bool transposed = CK < 16;
  std::vector<T> rows(transposed ? 0 : HW * CK);
  std::vector<T> cols(transposed || need_input_grad ? CK * HW : 0);
  std::vector<T> dy_t(transposed ? HW * K : 0);
  std::vector<T> d_kernels_t(transposed ? CK * K : 0);
  std::vector<T> kernels_t(CK * K);
  std::vector<T> scratch;
  detail::transpose(K, CK, kernels.data(), kernels_t.data());

  for (std::size_t n = 0; n < B; ++n) {
    const T* dy = d_output.data() + n * K * HW;
    add_row_sums(dy, K, HW, g.d_bias.data());
    if (transposed) {
      im2col(input.data() + n * C * HW, C, H, W, cols.data());
      detail::transpose(K, HW, dy, dy_t.data());
      detail::gemm_accumulate(CK, K, HW, cols.data(), HW, dy_t.data(), K, d_kernels_t.data(), K);
    } else {
      im2row(input.data() + n * C * HW, C, H, W, rows.data(), scratch);
      detail::gemm_accumulate(K, CK, HW, dy, HW, rows.data(), CK, g.d_kernels.data(), CK);
    }
    if (need_input_grad) {
      std::fill(cols.begin(), cols.end(), T{0});
      detail::gemm_accumulate(CK, HW, K, kernels_t.data(), K, dy, HW, cols.data(), HW);
      col2im_add(cols.data(), C, H, W, g.d_input.data() + n * C * HW);
    }
  }
  if (transposed) detail::transpose(CK, K, d_kernels_t.data(), g.d_kernels.data());
  return g;
}

template <class T>
PoolResult<T> maxpool2d_forward(const BasicTensor<T>& input) {
  expect_rank("maxpool2d", input.shape(), 4);
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  require(H % 2 == 0, ErrorCode::shape_mismatch, "maxpool2d: height " + std::to_string(H) + " is odd");
  require(W % 2 == 0, ErrorCode::shape_mismatch, "maxpool2d: width " + std::to_string(W) + " is odd");
  const std::size_t OH = H / 2, OW = W / 2;
  PoolResult<T> r{BasicTensor<T>({B, C, OH, OW}), std::vector<std::uint32_t>(B * C * OH * OW)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    const std::size_t base = plane * H * W;
    for (std::size_t y = 0; y < OH; ++y) {
      for (std::size_t x = 0; x < OW; ++x, ++o) {
        std::size_t best = base + (2 * y) * W + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * W + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        r.output[o] = input[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

template <class T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                  const BasicTensor<T>& d_output) {
  require(argmax.size() == d_output.size(), ErrorCode::shape_mismatch,
          "maxpool2d backward: gradient has " + std::to_string(d_output.size()) + " elements, expected " +
              std::to_string(argmax.size()));
  BasicTensor<T> d_input(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) d_input[argmax[i]] += d_output[i];
  return d_input;
}

template <class T>
BasicTensor<T> batchnorm2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& scale,
                                   const BasicTensor<T>& shift, RunningStats<T>* stats, Mode mode,
                                   BatchNormCache<T>* cache) {
  expect_rank("batchnorm2d", input.shape(), 4);
  const std::size_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  expect_extent("batchnorm2d", "scale", scale.size(), C);
  expect_extent("batchnorm2d", "shift", shift.size(), C);
  const std::size_t count = B * HW;

  std::vector<T> mean(C), inv_std(C);
  if (mode == Mode::train) {
    require(count >= 2, ErrorCode::invalid_argument, "batchnorm2d: train mode needs at least 2 values per channel");
    for (std::size_t c = 0; c < C; ++c) {
      LaneSum sum;
      for (std::size_t n = 0; n < B; ++n) sum.add(input.data() + (n * C + c) * HW, HW);
      const double mu = sum.total() / static_cast<double>(count);
      LaneSum dev;
      for (std::size_t n = 0; n < B; ++n) dev.add_squared_deviation(input.data() + (n * C + c) * HW, HW, mu);
      const double sq = dev.total();
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEpsilon));
      if (stats != nullptr) {
        require(stats->initialized(), ErrorCode::invalid_state, "batchnorm2d: running statistics not initialized");
        const double unbiased = sq / static_cast<double>(count - 1);
        stats->mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats->mean[c] + kBatchNormMomentum * mu);
        stats->var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats->var[c] + kBatchNormMomentum * unbiased);
      }
    }
  } else {
    require(stats != nullptr && stats->initialized(), ErrorCode::invalid_state,
            "batchnorm2d: eval mode requires initialized running statistics");
    expect_extent("batchnorm2d", "running mean", stats->mean.size(), C);
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats->mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats->var[c]) + kBatchNormEpsilon));
    }
  }

  BasicTensor<T> out(input.shape());
  if (cache != nullptr) {
    cache->mode = mode;
    if (cache->normalized.shape() != input.shape()) cache->normalized = BasicTensor<T>(input.shape());
    cache->inv_std = inv_std;
  }
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * HW;
      const T mu = mean[c], is = inv_std[c], g = scale[c], b = shift[c];
      const T* __restrict x = input.data() + off;
      T* __restrict y = out.data() + off;
      if (cache != nullptr) {
        T* __restrict xh = cache->normalized.data() + off;
        for (std::size_t i = 0; i < HW; ++i) xh[i] = (x[i] - mu) * is;
        for (std::size_t i = 0; i < HW; ++i) y[i] = g * xh[i] + b;
      } else {
        for (std::size_t i = 0; i < HW; ++i) y[i] = g * ((x[i] - mu) * is) + b;
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> batchnorm2d_eval(const BasicTensor<T>& input, const BasicTensor<T>& scale, const BasicTensor<T>& shift,
                                const RunningStats<T>& stats) {
  // eval mode never writes the statistics
  return batchnorm2d_forward(input, scale, shift, const_cast<RunningStats<T>*>(&stats), Mode::eval);
}

template <class T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormCache<T>& cache, const BasicTensor<T>& scale,
                                       const BasicTensor<T>& d_output) {
  const auto& xhat = cache.normalized;
  require(xhat.shape() == d_output.shape(), ErrorCode::shape_mismatch,
          "batchnorm2d backward: gradient shape " + shape_str(d_output.shape()) + " vs " + shape_str(xhat.shape()));
  const std::size_t B = xhat.dim(0), C = xhat.dim(1), HW = xhat.dim(2) * xhat.dim(3);
  const double count = static_cast<double>(B * HW);
  BatchNormGrads<T> g{BasicTensor<T>(xhat.shape()), BasicTensor<T>({C}), BasicTensor<T>({C})};
  for (std::size_t c = 0; c < C; ++c) {
    LaneSum dy_sum, dy_xhat_sum;
    for (std::size_t n = 0; n < B; ++n) {
      const std::size_t off = (n * C + c) * HW;
      dy_sum.add(d_output.data() + off, HW);
      dy_xhat_sum.add_product(d_output.data() + off, xhat.data() + off, HW);
    }
    const double sum_dy = dy_sum.total(), sum_dy_xhat = dy_xhat_sum.total();
    g.d_shift[c] = static_cast<T>(sum_dy);
    g.d_scale[c] = static_cast<T>(sum_dy_xhat);
    const T gamma = scale[c], is = cache.inv_std[c];
    if (cache.mode == Mode::eval) {
      for (std::size_t n = 0; n < B; ++n) {
        const std::size_t off = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) g.d_input[off + i] = d_output[off + i] * gamma * is;
      }
      continue;
    }
    // dx = gamma * inv_std / M * (M*dy - sum(dy) - xhat * sum(dy*xhat))
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
    const T k = gamma * is;
    for (std::size_t n = 0; n < B; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i)
        g.d_input[off + i] = k * (d_output[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
    }
  }
  return g;
}

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& d_output) {
  require(input.shape() == d_output.shape(), ErrorCode::shape_mismatch, "relu backward: shape mismatch");
  BasicTensor<T> d_input(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) d_input[i] = input[i] > T{0} ? d_output[i] : T{0};
  return d_input;
}

template <class T>
DropoutResult<T> dropout_forward(const BasicTensor<T>& input, double p, Mode mode, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorCode::invalid_argument, "dropout: p must lie in [0, 1)");
  DropoutResult<T> r{input, {}};
  if (mode == Mode::eval) return r;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  r.mask.resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = rng.uniform() < p ? T{0} : keep_scale;
    r.output[i] = input[i] * r.mask[i];
  }
  return r;
}

template <class T>
BasicTensor<T> dropout_backward(const std::vector<T>& mask, const BasicTensor<T>& d_output) {
  if (mask.empty()) return d_output;
  require(mask.size() == d_output.size(), ErrorCode::shape_mismatch, "dropout backward: mask size mismatch");
  BasicTensor<T> d_input = d_output;
  for (std::size_t i = 0; i < mask.size(); ++i) d_input[i] *= mask[i];
  return d_input;
}

template <class T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
  expect_rank("linear input", input.shape(), 2);
  expect_rank("linear weights", weights.shape(), 2);
  expect_extent("linear", "input features", input.dim(1), weights.dim(1));
  expect_extent("linear", "bias", bias.size(), weights.dim(0));
  const std::size_t B = input.dim(0), N = input.dim(1), M = weights.dim(0);
  std::vector<T> weights_t(N * M);
  detail::transpose(M, N, weights.data(), weights_t.data());
  BasicTensor<T> out({B, M});
  for (std::size_t b = 0; b < B; ++b) std::copy(bias.data(), bias.data() + M, out.data() + b * M);
  detail::gemm_accumulate(B, M, N, input.data(), N, weights_t.data(), M, out.data(), M);
  return out;
}

template <class T>
LinearGrads<T> linear_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& d_output, bool need_input_grad) {
  const std::size_t B = input.dim(0), N = input.dim(1), M = weights.dim(0);
  expect_rank("linear backward d_output", d_output.shape(), 2);
  expect_extent("linear backward", "batch", d_output.dim(0), B);
  expect_extent("linear backward", "output features", d_output.dim(1), M);
  LinearGrads<T> g{{}, BasicTensor<T>({M, N}), BasicTensor<T>({M})};
  std::vector<T> dy_t(M * B);
  detail::transpose(B, M, d_output.data(), dy_t.data());
  detail::gemm_accumulate(M, N, B, dy_t.data(), B, input.data(), N, g.d_weights.data(), N);
  for (std::size_t m = 0; m < M; ++m) {
    T s = T{0};
    for (std::size_t b = 0; b < B; ++b) s += dy_t[m * B + b];
    g.d_bias[m] = s;
  }
  if (need_input_grad) {
    g.d_input = BasicTensor<T>({B, N});
    detail::gemm_accumulate(B, N, M, d_output.data(), M, weights.data(), N, g.d_input.data(), N);
  }
  return g;
}

#define GLYPHFORGE_INSTANTIATE_LAYERS(T)                                                                          \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);   \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                          bool);                                                                 \
  template PoolResult<T> maxpool2d_forward(const BasicTensor<T>&);                                               \
  template BasicTensor<T> maxpool2d_backward(const Shape&, const std::vector<std::uint32_t>&,                    \
                                             const BasicTensor<T>&);                                             \
  template BasicTensor<T> batchnorm2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                              RunningStats<T>*, Mode, BatchNormCache<T>*);                       \
  template BasicTensor<T> batchnorm2d_eval(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                           const RunningStats<T>&);                                              \
  template BatchNormGrads<T> batchnorm2d_backward(const BatchNormCache<T>&, const BasicTensor<T>&,              \
                                                  const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template DropoutResult<T> dropout_forward(const BasicTensor<T>&, double, Mode, Rng&);                          \
  template BasicTensor<T> dropout_backward(const std::vector<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> linear_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);   \
  template LinearGrads<T> linear_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                          bool);

GLYPHFORGE_INSTANTIATE_LAYERS(float)
GLYPHFORGE_INSTANTIATE_LAYERS(double)

#undef GLYPHFORGE_INSTANTIATE_LAYERS

}  // namespace glyphforge
