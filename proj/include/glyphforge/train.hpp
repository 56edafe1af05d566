#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/data.hpp"
#include "glyphforge/model.hpp"
#include "json.hpp"

namespace glyphforge {

template <class T>
struct FocalLoss {
  double loss = 0.0;     // mean over the batch
  BasicTensor<T> grad;   // d loss / d logits, B x K
};

/// Mean of -(1 - p_t)^gamma * log p_t over the batch, via log-softmax.
template <class T>
FocalLoss<T> focal_loss(const BasicTensor<T>& logits, std::span<const std::size_t> targets, double gamma = 1.0);

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> m, v;  // lazily shaped on the first step
};

/// One Adam update with bias correction. Weight decay is added to the gradient
/// of every parameter whose slot has decays set.
template <class T>
void adam_step(std::span<const ParamSlot<T>> params, std::span<const BasicTensor<T>> grads, AdamState<T>& state,
               double lr, double weight_decay);

/// Reduce-on-plateau: halves (by `factor`) once more than `patience`
/// consecutive epochs fail to beat the best loss by `threshold`.
struct PlateauScheduler {
  double lr = 1e-3;
  double factor = 0.5;
  std::size_t patience = 5;
  double min_lr = 1e-6;
  double threshold = 1e-8;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  /// Feeds one epoch's validation loss; returns the learning rate to use next.
  double update(double loss);
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batches_per_epoch = 21;
  std::size_t batch_size = 100;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  double focal_gamma = 1.0;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.5;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;
  AugmentSpec augment{};

  /// Published schedule for the notation; `with_artificial` adds the extra
  /// lvlvpu batch per epoch.
  static TrainConfig for_notation(Notation n, bool with_artificial = false);
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // train loss when there is no validation set
  double val_accuracy = 0.0;
  double lr = 0.0;        // rate used during the epoch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
};

struct TrainResult {
  ClassifierParams params;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains one head on `key`. The output width comes from the key's
/// vocabulary. Deterministic per (config.seed, corpus, train, val).
TrainResult train_model(const ArchSpec& arch, const Corpus& corpus, std::span<const std::size_t> train,
                        std::span<const std::size_t> val, const TrainConfig& config, LabelKey key,
                        const EpochCallback& on_epoch = {});

/// Fraction of `members` whose argmax prediction under `params` matches the
/// key label (eval transform, eval mode).
double head_accuracy(const ClassifierParams& params, const Corpus& corpus, std::span<const std::size_t> members,
                     LabelKey key, const AugmentSpec& augment);

std::vector<std::size_t> labels_of(const Corpus& corpus, std::span<const std::size_t> members, LabelKey key);

}  // namespace glyphforge
