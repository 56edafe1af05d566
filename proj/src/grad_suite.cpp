#include "glyphforge/grad_suite.hpp"

#include "glyphforge/model.hpp"
#include "glyphforge/tape.hpp"
#include "glyphforge/train.hpp"

namespace glyphforge {

namespace {

TensorD random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using LayerFn = std::function<TensorD(Tape<double>&, const TensorD&)>;

// Objective <R, layer(x)> for a fixed random projection R.
GradCheckResult check_layer(TensorD& input, const std::vector<std::pair<std::string, TensorD*>>& params,
                            const LayerFn& layer, std::uint64_t seed, double epsilon) {
  Tape<double> probe_tape;
  const TensorD projection = random_tensor(layer(probe_tape, input).shape(), seed ^ 0x5eed);

  Tape<double> tape;
  (void)layer(tape, input);
  auto grads = tape.backward(projection);
  std::vector<TensorD> analytic{grads.front().d_input};
  for (auto& g : grads)
    for (auto& p : g.d_params) analytic.push_back(std::move(p));

  std::vector<GradCheckTarget> targets{{"input", &input, &analytic[0]}};
  for (std::size_t i = 0; i < params.size(); ++i) targets.push_back({params[i].first, params[i].second, &analytic[i + 1]});
  const auto objective = [&] {
    Tape<double> t(Tape<double>::Options{.track_signature = true});
    const TensorD y = layer(t, input);
    return Probe{dot(y, projection), t.activation_signature()};
  };
  return grad_check(objective, targets, epsilon);
}

GradCheckResult check_focal(std::uint64_t seed, double epsilon) {
  TensorD logits = random_tensor({4, 7}, 1000 + seed, 2.0);
  Rng rng(seed);
  std::vector<std::size_t> targets(4);
  for (auto& t : targets) t = rng.below(7);
  const TensorD analytic = focal_loss(logits, targets, 1.0).grad;
  const std::vector<GradCheckTarget> gt{{"logits", &logits, &analytic}};
  return grad_check([&] { return Probe{focal_loss(logits, targets, 1.0).loss, 0}; }, gt, epsilon);
}

// Whole classifier in double with a pinned dropout mask and frozen running stats.
GradCheckResult check_model(const ArchSpec& arch, std::uint64_t seed, double epsilon) {
  Rng init(seed);
  std::vector<std::string> vocab;
  for (std::size_t k = 0; k < arch.n_classes; ++k) vocab.push_back("c" + std::to_string(k));
  auto params = build_classifier(arch, vocab, init).cast<double>();
  TensorD x = random_tensor({2, 1, arch.input_side, arch.input_side}, 2000 + seed);
  Rng label_rng(seed + 1);
  const std::vector<std::size_t> targets{label_rng.below(arch.n_classes), label_rng.below(arch.n_classes)};

  const auto run = [&](Tape<double>& tape) {
    Rng dropout(seed ^ 0xd50);
    return focal_loss(forward_train(params, x, dropout, tape, false), targets, 1.0);
  };
  Tape<double> tape;
  const auto fl = run(tape);
  auto layer_grads = tape.backward(fl.grad);
  const TensorD d_input = layer_grads.front().d_input;
  const auto grads = parameter_gradients(std::move(layer_grads));
  const auto slots = params.trainable();

  std::vector<GradCheckTarget> targets_list{{"input", &x, &d_input}};
  for (std::size_t i = 0; i < slots.size(); ++i) targets_list.push_back({slots[i].name, slots[i].tensor, &grads[i]});
  const auto objective = [&] {
    Tape<double> t(Tape<double>::Options{.track_signature = true});
    const double loss = run(t).loss;
    return Probe{loss, t.activation_signature()};
  };
  return grad_check(objective, targets_list, epsilon);
}

}  // namespace

std::vector<SuiteCheck> run_gradient_suite(std::size_t seeds, double epsilon, std::uint64_t first_seed) {
  std::vector<SuiteCheck> out;
  const auto add = [&](std::string name, std::uint64_t seed, GradCheckResult r, double tol) {
    out.push_back({std::move(name), seed, std::move(r), tol});
  };
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    TensorD x = random_tensor({2, 2, 6, 6}, 100 + seed);
    TensorD w = random_tensor({3, 2, 3, 3}, 200 + seed), b = random_tensor({3}, 300 + seed);
    add("conv2d", seed,
        check_layer(x, {{"kernels", &w}, {"bias", &b}}, [&](Tape<double>& t, const TensorD& in) { return t.conv2d(in, w, b); },
                    seed, epsilon),
        1e-4);

    TensorD g = random_tensor({2}, 400 + seed), s = random_tensor({2}, 500 + seed);
    add("batchnorm2d.train", seed,
        check_layer(x, {{"scale", &g}, {"shift", &s}},
                    [&](Tape<double>& t, const TensorD& in) { return t.batchnorm2d(in, g, s, nullptr, Mode::train); },
                    seed, epsilon),
        1e-4);
    auto stats = RunningStats<double>::identity(2);
    stats.mean = random_tensor({2}, 600 + seed);
    add("batchnorm2d.eval", seed,
        check_layer(x, {{"scale", &g}, {"shift", &s}},
                    [&](Tape<double>& t, const TensorD& in) { return t.batchnorm2d(in, g, s, &stats, Mode::eval); },
                    seed, epsilon),
        1e-4);

    add("relu", seed, check_layer(x, {}, [](Tape<double>& t, const TensorD& in) { return t.relu(in); }, seed, epsilon),
        1e-4);
    add("maxpool2d", seed,
        check_layer(x, {}, [](Tape<double>& t, const TensorD& in) { return t.maxpool2d(in); }, seed, epsilon), 1e-4);
    add("dropout", seed,
        check_layer(x, {},
                    [&](Tape<double>& t, const TensorD& in) {
                      Rng pinned(seed);
                      return t.dropout(in, 0.5, Mode::train, pinned);
                    },
                    seed, epsilon),
        1e-4);

    TensorD lx = random_tensor({4, 6}, 700 + seed), lw = random_tensor({3, 6}, 800 + seed), lb = random_tensor({3}, 900 + seed);
    add("linear", seed,
        check_layer(lx, {{"weights", &lw}, {"bias", &lb}},
                    [&](Tape<double>& t, const TensorD& in) { return t.linear(in, lw, lb); }, seed, epsilon),
        1e-4);

    add("focal_loss", seed, check_focal(seed, epsilon), 1e-4);

    TensorD sx = random_tensor({2, 1, 8, 8}, 10 + seed);
    TensorD sw = random_tensor({4, 1, 3, 3}, 20 + seed, 0.5), sb = random_tensor({4}, 30 + seed, 0.1);
    TensorD sg = random_tensor({4}, 40 + seed), ss = random_tensor({4}, 50 + seed);
    add("conv+relu+batchnorm", seed,
        check_layer(sx, {{"kernels", &sw}, {"bias", &sb}, {"scale", &sg}, {"shift", &ss}},
                    [&](Tape<double>& t, const TensorD& in) {
                      return t.batchnorm2d(t.relu(t.conv2d(in, sw, sb)), sg, ss, nullptr, Mode::train);
                    },
                    seed, epsilon),
        1e-4);
  }

  // Toy networks on a 2x1x8x8 batch, driven by the focal loss.
  ArchSpec head;
  head.input_side = 8;
  head.conv_channels = {3};
  head.fc1_width = 6;
  head.n_classes = 4;
  ArchSpec full;
  full.input_side = 8;
  full.conv_channels = {2, 3, 4};
  full.fc1_width = 5;
  full.n_classes = 3;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    add("focal_head.toy", seed, check_model(head, seed, epsilon), 1e-4);
    add("model.end_to_end", seed, check_model(full, seed, epsilon), 1e-3);
  }
  return out;
}

}  // namespace glyphforge
