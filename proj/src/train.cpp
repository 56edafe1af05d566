#include "glyphforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "glyphforge/error.hpp"

namespace glyphforge {

using nlohmann::json;

template <class T>
FocalLoss<T> focal_loss(const BasicTensor<T>& logits, std::span<const std::size_t> targets, double gamma) {
  expect_rank("focal_loss", logits.shape(), 2);
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  require(B > 0 && K > 0, ErrorCode::invalid_argument, "focal_loss: empty logits");
  require(targets.size() == B, ErrorCode::shape_mismatch, "focal_loss: one target per row required");
  require(gamma >= 0.0, ErrorCode::invalid_argument, "focal_loss: gamma must be non-negative");
  FocalLoss<T> out{0.0, BasicTensor<T>({B, K})};
  std::vector<double> logp(K);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t t = targets[i];
    require(t < K, ErrorCode::invalid_argument, "focal_loss: target " + std::to_string(t) + " out of range");
    const T* z = logits.data() + i * K;
    double zmax = z[0];
    for (std::size_t k = 0; k < K; ++k) {
      require(std::isfinite(static_cast<double>(z[k])), ErrorCode::non_finite, "focal_loss: non-finite logit");
      zmax = std::max(zmax, static_cast<double>(z[k]));
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(sum);
    for (std::size_t k = 0; k < K; ++k) logp[k] = z[k] - lse;

    // L(q) = -(1 - e^q)^gamma * q with q = log p_t.
    const double q = logp[t], one_minus = -std::expm1(q);
    const double mod = std::pow(one_minus, gamma);
    out.loss += -mod * q;
    double dq = -mod;
    if (gamma > 0.0 && one_minus > 0.0) dq += gamma * std::pow(one_minus, gamma - 1.0) * std::exp(q) * q;
    T* g = out.grad.data() + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double d = (k == t ? 1.0 : 0.0) - std::exp(logp[k]);
      g[k] = static_cast<T>(dq * d / static_cast<double>(B));
    }
  }
  out.loss /= static_cast<double>(B);
  return out;
}

template FocalLoss<float> focal_loss(const BasicTensor<float>&, std::span<const std::size_t>, double);
template FocalLoss<double> focal_loss(const BasicTensor<double>&, std::span<const std::size_t>, double);

template <class T>
void adam_step(std::span<const ParamSlot<T>> params, std::span<const BasicTensor<T>> grads, AdamState<T>& state,
               double lr, double weight_decay) {
  require(lr > 0.0, ErrorCode::invalid_argument, "adam: learning rate must be positive");
  require(weight_decay >= 0.0, ErrorCode::invalid_argument, "adam: weight decay must be non-negative");
  require(params.size() == grads.size(), ErrorCode::shape_mismatch, "adam: one gradient per parameter required");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape());
      state.v.emplace_back(p.tensor->shape());
    }
  }
  require(state.m.size() == params.size(), ErrorCode::shape_mismatch, "adam: state does not match parameters");
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t s = 0; s < params.size(); ++s) {
    BasicTensor<T>& p = *params[s].tensor;
    const BasicTensor<T>& g = grads[s];
    require(g.shape() == p.shape() && state.m[s].shape() == p.shape(), ErrorCode::shape_mismatch,
            "adam: gradient shape differs for " + params[s].name);
    const double wd = params[s].decays ? weight_decay : 0.0;
    T* __restrict pv = p.data();
    T* __restrict m = state.m[s].data();
    T* __restrict v = state.v[s].data();
    const T* __restrict gv = g.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(gv[i]) + wd * static_cast<double>(pv[i]);
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      pv[i] = static_cast<T>(pv[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon));
    }
  }
}

template void adam_step(std::span<const ParamSlot<float>>, std::span<const BasicTensor<float>>, AdamState<float>&,
                        double, double);
template void adam_step(std::span<const ParamSlot<double>>, std::span<const BasicTensor<double>>,
                        AdamState<double>&, double, double);

double PlateauScheduler::update(double loss) {
  if (loss < best - threshold) {
    best = loss;
    bad_epochs = 0;
  } else if (++bad_epochs > patience) {
    lr = std::max(min_lr, lr * factor);
    bad_epochs = 0;
  }
  return lr;
}

TrainConfig TrainConfig::for_notation(Notation n, bool with_artificial) {
  TrainConfig c;
  c.augment = AugmentSpec::for_notation(n);
  if (n == Notation::suzipu) {
    c.epochs = 80;
    c.batches_per_epoch = 43;
    c.lr = 1e-3;
  } else {
    c.epochs = 50;
    c.batches_per_epoch = with_artificial ? 22 : 21;
    c.lr = 5e-4;
  }
  return c;
}

void TrainConfig::validate() const {
  require(epochs >= 1 && batches_per_epoch >= 1 && batch_size >= 1, ErrorCode::invalid_argument,
          "train config: epochs, batches_per_epoch and batch_size must be positive");
  require(lr > 0.0 && weight_decay >= 0.0 && focal_gamma >= 0.0 && min_lr > 0.0, ErrorCode::invalid_argument,
          "train config: lr and min_lr must be positive, weight_decay and focal_gamma non-negative");
  require(plateau_patience >= 1, ErrorCode::invalid_argument, "train config: plateau_patience must be positive");
  require(plateau_factor > 0.0 && plateau_factor < 1.0, ErrorCode::invalid_argument,
          "train config: plateau_factor must lie in (0, 1)");
  augment.validate();
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batches_per_epoch", c.batches_per_epoch},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"focal_gamma", c.focal_gamma},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"min_lr", c.min_lr},
          {"seed", c.seed},
          {"augment",
           {{"resize_min", c.augment.resize_min},
            {"resize_max", c.augment.resize_max},
            {"rotate_deg", c.augment.rotate_deg},
            {"canvas", c.augment.canvas},
            {"eval_resize", c.augment.eval_resize},
            {"denoise", c.augment.denoise}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    const auto get = [&](const json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "epochs", c.epochs);
    get(j, "batches_per_epoch", c.batches_per_epoch);
    get(j, "batch_size", c.batch_size);
    get(j, "lr", c.lr);
    get(j, "weight_decay", c.weight_decay);
    get(j, "focal_gamma", c.focal_gamma);
    get(j, "plateau_patience", c.plateau_patience);
    get(j, "plateau_factor", c.plateau_factor);
    get(j, "min_lr", c.min_lr);
    get(j, "seed", c.seed);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      get(a, "resize_min", c.augment.resize_min);
      get(a, "resize_max", c.augment.resize_max);
      get(a, "rotate_deg", c.augment.rotate_deg);
      get(a, "canvas", c.augment.canvas);
      get(a, "eval_resize", c.augment.eval_resize);
      get(a, "denoise", c.augment.denoise);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_acc,lr\n" << std::setprecision(9);
  for (const auto& e : epochs)
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_accuracy << ',' << e.lr << '\n';
  return os.str();
}

std::vector<std::size_t> labels_of(const Corpus& corpus, std::span<const std::size_t> members, LabelKey key) {
  std::vector<std::size_t> out;
  out.reserve(members.size());
  for (auto m : members) out.push_back(corpus.instances.at(m).label(key));
  return out;
}

namespace {

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t K = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    hits += argmax(std::span<const float>(logits.data() + i * K, K)) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

double head_accuracy(const ClassifierParams& params, const Corpus& corpus, std::span<const std::size_t> members,
                     LabelKey key, const AugmentSpec& augment) {
  require(!members.empty(), ErrorCode::invalid_argument, "accuracy: no instances");
  return accuracy(logits_chunked(params, eval_batch(corpus, members, augment)), labels_of(corpus, members, key));
}

TrainResult train_model(const ArchSpec& arch_in, const Corpus& corpus, std::span<const std::size_t> train,
                        std::span<const std::size_t> val, const TrainConfig& config, LabelKey key,
                        const EpochCallback& on_epoch) {
  config.validate();
  require(!train.empty(), ErrorCode::invalid_argument, "train: empty training set");
  ArchSpec arch = arch_in;
  arch.input_side = config.augment.canvas;
  arch.n_classes = vocabulary(key).size();

  Rng init_rng(derive_seed(config.seed, {0}));
  TrainResult result{build_classifier(arch, vocabulary(key), init_rng), {}};
  ClassifierParams& params = result.params;
  ClassUniformSampler sampler(corpus, train, key, derive_seed(config.seed, {1}));
  Rng dropout_rng(derive_seed(config.seed, {2}));

  const Tensor val_batch = val.empty() ? Tensor() : eval_batch(corpus, val, config.augment);
  const std::vector<std::size_t> val_labels = labels_of(corpus, val, key);

  auto slots = params.trainable();
  AdamState<float> adam;
  PlateauScheduler plateau{config.lr, config.plateau_factor, config.plateau_patience, config.min_lr};
  double lr = config.lr;
  std::vector<std::size_t> targets;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < config.batches_per_epoch; ++b) {
      const auto members = sampler.next_batch(config.batch_size);
      const Tensor x = train_batch(corpus, members, config.augment, derive_seed(config.seed, {3, epoch, b}));
      targets = labels_of(corpus, members, key);

      Tape<float> tape({.input_grad = false, .keep_all_grads = false});
      const Tensor logits = forward_train(params, x, dropout_rng, tape);
      FocalLoss<float> fl;
      try {
        fl = focal_loss(logits, targets, config.focal_gamma);
      } catch (const Error& e) {
        fail(ErrorCode::non_finite, "training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(b) + ": " + e.what());
      }
      require(std::isfinite(fl.loss), ErrorCode::non_finite,
              "training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                  ": non-finite loss");
      const auto grads = parameter_gradients(tape.backward(fl.grad));
      adam_step<float>(slots, grads, adam, lr, config.weight_decay);
      loss_sum += fl.loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(config.batches_per_epoch);
    if (val.empty()) {
      rec.val_loss = rec.train_loss;
    } else {
      const Tensor logits = logits_chunked(params, val_batch);
      rec.val_loss = focal_loss(logits, val_labels, config.focal_gamma).loss;
      rec.val_accuracy = accuracy(logits, val_labels);
    }
    lr = plateau.update(rec.val_loss);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace glyphforge
