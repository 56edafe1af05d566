#include <gtest/gtest.h>

#include <cmath>

#include "glyphforge/grad_check.hpp"
#include "glyphforge/layers.hpp"
#include "glyphforge/tape.hpp"
#include "test_util.hpp"

using namespace glyphforge;
using glyphforge::testing::random_tensor;
using glyphforge::testing::sum_product;

namespace {

// Direct 3x3 / pad 1 convolution in double, independent of the im2col path.
TensorD naive_conv(const TensorD& x, const TensorD& w, const TensorD& b) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = w.dim(0);
  TensorD y({B, K, H, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t q = 0; q < W; ++q) {
          double s = b[k];
          for (std::size_t c = 0; c < C; ++c)
            for (int dh = -1; dh <= 1; ++dh)
              for (int dw = -1; dw <= 1; ++dw) {
                const long yy = static_cast<long>(h) + dh, xx = static_cast<long>(q) + dw;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += x.at(n, c, yy, xx) * w.at(k, c, dh + 1, dw + 1);
              }
          y.at(n, k, h, q) = s;
        }
  return y;
}

template <class F>
GradCheckResult check_single(TensorD& input, std::vector<std::pair<std::string, TensorD*>> params, F&& layer,
                             std::uint64_t seed) {
  // objective = <R, layer(x)> for a fixed random projection R
  Tape<double> probe_tape;
  const TensorD probe = layer(probe_tape, input);
  const TensorD projection = random_tensor<double>(probe.shape(), seed ^ 0x5eed);

  Tape<double> tape;
  (void)layer(tape, input);
  auto grads = tape.backward(projection);
  std::vector<TensorD> analytic;
  // input gradient, then every layer's parameter gradients in forward order
  analytic.push_back(grads.front().d_input);
  for (auto& layer_grads : grads)
    for (auto& g : layer_grads.d_params) analytic.push_back(g);
  EXPECT_EQ(analytic.size(), params.size() + 1);

  std::vector<GradCheckTarget> targets{{"input", &input, &analytic[0]}};
  for (std::size_t i = 0; i < params.size(); ++i)
    targets.push_back({params[i].first, params[i].second, &analytic[i + 1]});
  auto objective = [&] {
    Tape<double> t(Tape<double>::Options{.track_signature = true});
    const TensorD y = layer(t, input);
    return Probe{sum_product(y, projection), t.activation_signature()};
  };
  return grad_check(objective, targets);
}

}  // namespace

TEST(Conv2d, PaddingPreservesExtents) {
  const Tensor x({100, 1, 48, 48}, 0.5f);
  const Tensor w({16, 1, 3, 3}, 0.1f);
  const Tensor b({16});
  EXPECT_EQ(conv2d_forward(x, w, b).shape(), (Shape{100, 16, 48, 48}));
  for (std::size_t h : {1u, 2u, 3u, 7u}) {
    for (std::size_t wd : {1u, 4u, 5u}) {
      const Tensor xi({2, 3, h, wd}, 1.0f);
      EXPECT_EQ(conv2d_forward(xi, Tensor({4, 3, 3, 3}, 1.0f), Tensor({4})).shape(), (Shape{2, 4, h, wd}));
    }
  }
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  const Tensor x = random_tensor<float>({2, 1, 9, 7}, 3);
  Tensor w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0f;
  EXPECT_EQ(conv2d_forward(x, w, Tensor({1})), x);
}

TEST(Conv2d, AllOnesOverlapCounts) {
  const Tensor y = conv2d_forward(Tensor({1, 1, 3, 3}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}));
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 1), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 2, 2), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 1), 6.0f);
}

TEST(Conv2d, MatchesDirectConvolution) {
  const auto x = random_tensor<double>({3, 5, 11, 13}, 1);
  const auto w = random_tensor<double>({7, 5, 3, 3}, 2);
  const auto b = random_tensor<double>({7}, 3);
  const auto got = conv2d_forward(x, w, b), want = naive_conv(x, w, b);
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
}

TEST(Conv2d, ShapeMismatchNamesAxis) {
  try {
    conv2d_forward(Tensor({1, 2, 4, 4}), Tensor({3, 1, 3, 3}), Tensor({3}));
    FAIL() << "expected shape mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    EXPECT_NE(std::string(e.what()).find("input channels"), std::string::npos);
  }
  EXPECT_THROW(conv2d_forward(Tensor({1, 1, 4, 4}), Tensor({1, 1, 5, 5}), Tensor({1})), Error);
}

TEST(Conv2d, ForwardIsBitReproducible) {
  const auto x = random_tensor<float>({4, 16, 24, 24}, 11);
  const auto w = random_tensor<float>({32, 16, 3, 3}, 12);
  const auto b = random_tensor<float>({32}, 13);
  EXPECT_EQ(conv2d_forward(x, w, b), conv2d_forward(x, w, b));
}

TEST(MaxPool, HalvesAndPicksMaximum) {
  EXPECT_EQ(maxpool2d_forward(Tensor({2, 3, 48, 48})).output.shape(), (Shape{2, 3, 24, 24}));
  const auto c = maxpool2d_forward(Tensor({1, 2, 4, 6}, 2.5f));
  for (float v : c.output.values()) EXPECT_EQ(v, 2.5f);
  const auto r = maxpool2d_forward(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(r.output[0], 4.0f);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, RejectsOddExtent) {
  EXPECT_THROW(maxpool2d_forward(Tensor({1, 1, 3, 4})), Error);
  EXPECT_THROW(maxpool2d_forward(Tensor({1, 1, 4, 5})), Error);
}

TEST(MaxPool, BackwardRoutesOnePositionPerWindow) {
  const auto x = random_tensor<float>({2, 3, 8, 6}, 5);
  const auto r = maxpool2d_forward(x);
  const Tensor dy({2, 3, 4, 3}, 1.0f);
  const auto dx = maxpool2d_backward(x.shape(), r.argmax, dy);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t q = 0; q < 3; ++q) {
          int ones = 0;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              const float g = dx.at(n, c, 2 * y + a, 2 * q + b);
              EXPECT_TRUE(g == 0.0f || g == 1.0f);
              ones += g == 1.0f;
              if (g == 1.0f) EXPECT_EQ(x.at(n, c, 2 * y + a, 2 * q + b), r.output.at(n, c, y, q));
            }
          EXPECT_EQ(ones, 1);
        }
}

TEST(BatchNorm, TrainModeStandardizes) {
  const auto x = random_tensor<float>({8, 3, 5, 5}, 21, 4.0);
  auto stats = RunningStats<float>::identity(3);
  const auto y = batchnorm2d_forward(x, Tensor({3}, 1.0f), Tensor({3}), &stats, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 25; ++i) sum += y[(n * 3 + c) * 25 + i];
    const double mean = sum / 200;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 25; ++i) sq += std::pow(y[(n * 3 + c) * 25 + i] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-4);
    EXPECT_NEAR(sq / 200, 1.0, 1e-4);
  }
  // running stats moved 10% toward the batch statistics
  EXPECT_NE(stats.mean[0], 0.0f);
}

TEST(BatchNorm, TwoValueChannelMapsToPlusMinusOne) {
  const auto y = batchnorm2d_forward(Tensor::from({2, 1, 1, 1}, {2, 4}), Tensor({1}, 1.0f), Tensor({1}), static_cast<RunningStats<float>*>(nullptr),
                                     Mode::train);
  EXPECT_NEAR(y[0], -1.0f, 1e-4);
  EXPECT_NEAR(y[1], 1.0f, 1e-4);
}

TEST(BatchNorm, RunningStatisticsEma) {
  auto stats = RunningStats<double>::identity(1);
  batchnorm2d_forward(TensorD::from({2, 1, 1, 1}, {2, 4}), TensorD({1}, 1.0), TensorD({1}), &stats, Mode::train);
  EXPECT_NEAR(stats.mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(stats.var[0], 0.9 + 0.1 * 2.0, 1e-12);  // unbiased batch variance of {2,4} is 2
}

TEST(BatchNorm, EvalWithIdentityStats) {
  const auto x = random_tensor<float>({2, 2, 3, 3}, 4);
  auto stats = RunningStats<float>::identity(2);
  const auto y = batchnorm2d_forward(x, Tensor({2}, 1.0f), Tensor({2}), &stats, Mode::eval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-4);
  RunningStats<float> empty;
  EXPECT_THROW(batchnorm2d_forward(x, Tensor({2}, 1.0f), Tensor({2}), &empty, Mode::eval), Error);
  EXPECT_THROW(batchnorm2d_forward(x, Tensor({2}, 1.0f), Tensor({2}), static_cast<RunningStats<float>*>(nullptr), Mode::eval), Error);
}

TEST(Relu, ForwardAndSubgradient) {
  const auto x = Tensor::from({3}, {-1, 0, 2});
  EXPECT_EQ(relu_forward(x), Tensor::from({3}, {0, 0, 2}));
  const auto pos = Tensor::from({2}, {0.5f, 3.0f});
  EXPECT_EQ(relu_forward(pos), pos);
  const auto g = relu_backward(x, Tensor::from({3}, {5, 5, 5}));
  EXPECT_EQ(g, Tensor::from({3}, {0, 0, 5}));
}

TEST(Dropout, EvalAndZeroRateAreIdentity) {
  Rng rng(1);
  const auto x = random_tensor<float>({4, 10}, 9);
  EXPECT_EQ(dropout_forward(x, 0.5, Mode::eval, rng).output, x);
  EXPECT_EQ(dropout_forward(x, 0.0, Mode::train, rng).output, x);
  EXPECT_THROW(dropout_forward(x, 1.0, Mode::train, rng), Error);
  EXPECT_THROW(dropout_forward(x, -0.1, Mode::train, rng), Error);
}

TEST(Dropout, ExpectationPreservedAtPinnedSeed) {
  Rng rng(2024);
  const Tensor ones({1000000}, 1.0f);
  const auto r = dropout_forward(ones, 0.5, Mode::train, rng);
  double sum = 0;
  for (float v : r.output.values()) sum += v;
  const double mean = sum / 1e6;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
  const auto dx = dropout_backward(r.mask, ones);
  EXPECT_EQ(dx, r.output);
}

TEST(Linear, Examples) {
  const auto x = random_tensor<float>({3, 4}, 7);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0f;
  EXPECT_EQ(linear_forward(x, eye, Tensor({4})), x);
  EXPECT_EQ(linear_forward(Tensor({100, 2304}), Tensor({128, 2304}), Tensor({128})).shape(), (Shape{100, 128}));
  const auto y = linear_forward(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 2}, {1, 1, 1, -1}),
                                Tensor::from({2}, {0, 1}));
  EXPECT_EQ(y, Tensor::from({1, 2}, {3, 0}));
  EXPECT_THROW(linear_forward(Tensor({1, 3}), Tensor({2, 2}), Tensor({2})), Error);
}

TEST(Linear, SumLossWeightGradientIsBroadcastOfSummedInputs) {
  const auto x = random_tensor<double>({5, 3}, 8);
  const auto w = random_tensor<double>({4, 3}, 9);
  const auto g = linear_backward(x, w, TensorD({5, 4}, 1.0));
  for (std::size_t m = 0; m < 4; ++m)
    for (std::size_t n = 0; n < 3; ++n) {
      double s = 0;
      for (std::size_t b = 0; b < 5; ++b) s += x.at(b, n);
      EXPECT_NEAR(g.d_weights.at(m, n), s, 1e-12);
    }
  for (std::size_t m = 0; m < 4; ++m) EXPECT_DOUBLE_EQ(g.d_bias[m], 5.0);
}

TEST(Tape, RejectsSecondReplay) {
  const auto w = random_tensor<float>({2, 3}, 1);
  const Tensor b({2});
  Tape<float> tape;
  auto y = tape.linear(random_tensor<float>({1, 3}, 2), w, b);
  tape.backward(Tensor(y.shape(), 1.0f));
  EXPECT_TRUE(tape.consumed());
  try {
    tape.backward(Tensor(y.shape(), 1.0f));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_state);
  }
  EXPECT_THROW(tape.relu(y), Error);
}

TEST(Tape, GradientOfSumIsSumOfGradients) {
  const auto x = random_tensor<double>({2, 2, 4, 4}, 3);
  const auto w = random_tensor<double>({3, 2, 3, 3}, 4);
  const auto b = random_tensor<double>({3}, 5);
  const auto r1 = random_tensor<double>({2, 3, 2, 2}, 6), r2 = random_tensor<double>({2, 3, 2, 2}, 7);
  auto run = [&](const TensorD& d) {
    Tape<double> t;
    t.maxpool2d(t.relu(t.conv2d(x, w, b)));
    return t.backward(d);
  };
  TensorD r12 = r1;
  for (std::size_t i = 0; i < r12.size(); ++i) r12[i] += r2[i];
  const auto g1 = run(r1), g2 = run(r2), g12 = run(r12);
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_NEAR(g12[0].d_params[0][i], g1[0].d_params[0][i] + g2[0].d_params[0][i], 1e-10);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g12[0].d_input[i], g1[0].d_input[i] + g2[0].d_input[i], 1e-10);
}

TEST(GradCheck, LinearLayer) {
  auto x = random_tensor<double>({4, 3}, 1);
  auto w = random_tensor<double>({5, 3}, 2);
  auto b = random_tensor<double>({5}, 3);
  const auto r = check_single(x, {{"weights", &w}, {"bias", &b}},
                              [&](Tape<double>& t, const TensorD& in) { return t.linear(in, w, b); }, 4);
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst;
  EXPECT_EQ(r.checked, 12u + 15u + 5u);
}

TEST(GradCheck, EveryLayerTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_tensor<double>({2, 2, 6, 6}, 100 + seed);
    auto w = random_tensor<double>({3, 2, 3, 3}, 200 + seed);
    auto b = random_tensor<double>({3}, 300 + seed);
    auto r = check_single(x, {{"kernels", &w}, {"bias", &b}},
                          [&](Tape<double>& t, const TensorD& in) { return t.conv2d(in, w, b); }, seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "conv " << r.worst;

    auto g = random_tensor<double>({2}, 400 + seed);
    auto s = random_tensor<double>({2}, 500 + seed);
    r = check_single(x, {{"scale", &g}, {"shift", &s}},
                     [&](Tape<double>& t, const TensorD& in) {
                       return t.batchnorm2d(in, g, s, nullptr, Mode::train);
                     },
                     seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "batchnorm " << r.worst;

    auto stats = RunningStats<double>::identity(2);
    stats.mean = random_tensor<double>({2}, 600 + seed);
    r = check_single(x, {{"scale", &g}, {"shift", &s}},
                     [&](Tape<double>& t, const TensorD& in) { return t.batchnorm2d(in, g, s, &stats, Mode::eval); },
                     seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "batchnorm eval " << r.worst;

    r = check_single(x, {}, [&](Tape<double>& t, const TensorD& in) { return t.relu(in); }, seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "relu " << r.worst;
    r = check_single(x, {}, [&](Tape<double>& t, const TensorD& in) { return t.maxpool2d(in); }, seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "maxpool " << r.worst;
    r = check_single(x, {},
                     [&](Tape<double>& t, const TensorD& in) {
                       Rng pinned(seed);
                       return t.dropout(in, 0.5, Mode::train, pinned);
                     },
                     seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "dropout " << r.worst;

    auto lx = random_tensor<double>({4, 6}, 700 + seed);
    auto lw = random_tensor<double>({3, 6}, 800 + seed);
    auto lb = random_tensor<double>({3}, 900 + seed);
    r = check_single(lx, {{"weights", &lw}, {"bias", &lb}},
                     [&](Tape<double>& t, const TensorD& in) { return t.linear(in, lw, lb); }, seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "linear " << r.worst;
  }
}

TEST(GradCheck, ConvReluBatchNormStack) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_tensor<double>({2, 1, 8, 8}, 10 + seed);
    auto w = random_tensor<double>({4, 1, 3, 3}, 20 + seed, 0.5);
    auto b = random_tensor<double>({4}, 30 + seed, 0.1);
    auto g = random_tensor<double>({4}, 40 + seed);
    auto s = random_tensor<double>({4}, 50 + seed);
    const auto r = check_single(x, {{"kernels", &w}, {"bias", &b}, {"scale", &g}, {"shift", &s}},
                                [&](Tape<double>& t, const TensorD& in) {
                                  return t.batchnorm2d(t.relu(t.conv2d(in, w, b)), g, s, nullptr, Mode::train);
                                },
                                seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
  }
}

TEST(GradCheck, RejectsNonFinite) {
  TensorD v({1}, 1.0), a({1}, 0.0);
  std::vector<GradCheckTarget> targets{{"v", &v, &a}};
  EXPECT_THROW(grad_check([] { return Probe{std::nan(""), 0}; }, targets), Error);
}
