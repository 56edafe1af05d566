#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/layers.hpp"
#include "glyphforge/rng.hpp"
#include "glyphforge/tape.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge {

/// Compact CNN topology: N x [conv3x3 -> ReLU -> batchnorm -> maxpool2]
/// -> flatten -> fc1 -> ReLU -> dropout -> fc2.
struct ArchSpec {
  std::size_t input_side = 48;
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t fc1_width = 128;
  std::size_t n_classes = 17;
  double dropout_p = 0.5;

  void validate() const;
  std::size_t final_side() const { return input_side >> conv_channels.size(); }
  std::size_t flatten_width() const { return conv_channels.back() * final_side() * final_side(); }
  /// Number of trainable scalars (excludes running statistics).
  std::size_t parameter_count() const;

  bool operator==(const ArchSpec&) const = default;
};

template <class T>
struct ConvBlockParams {
  BasicTensor<T> kernels;  // K x C x 3 x 3
  BasicTensor<T> bias;
  BasicTensor<T> bn_scale;
  BasicTensor<T> bn_shift;
  RunningStats<T> running;
};

template <class T>
struct ParamSlot {
  std::string name;
  BasicTensor<T>* tensor;
  bool decays;  // false for biases and batchnorm parameters
};

template <class T>
struct BasicClassifierParams {
  ArchSpec arch;
  std::vector<std::string> vocabulary;
  std::vector<ConvBlockParams<T>> blocks;
  BasicTensor<T> fc1_weights, fc1_bias;
  BasicTensor<T> fc2_weights, fc2_bias;

  /// Trainable tensors in the order gradients are produced.
  std::vector<ParamSlot<T>> trainable();

  /// Every stored tensor (trainable plus running statistics), serialization order.
  std::vector<std::pair<std::string, const BasicTensor<T>*>> tensors() const;

  template <class U>
  BasicClassifierParams<U> cast() const {
    BasicClassifierParams<U> out{arch, vocabulary, {}, fc1_weights.template cast<U>(),
                                 fc1_bias.template cast<U>(), fc2_weights.template cast<U>(),
                                 fc2_bias.template cast<U>()};
    for (const auto& b : blocks) {
      out.blocks.push_back({b.kernels.template cast<U>(), b.bias.template cast<U>(), b.bn_scale.template cast<U>(),
                            b.bn_shift.template cast<U>(),
                            {b.running.mean.template cast<U>(), b.running.var.template cast<U>()}});
    }
    return out;
  }
};

using ClassifierParams = BasicClassifierParams<float>;

/// Kaiming-uniform (fan-in) weights, zero biases, batchnorm scale 1 / shift 0,
/// running statistics (0, 1).
ClassifierParams build_classifier(const ArchSpec& arch, std::vector<std::string> vocabulary, Rng& rng);

/// Train-mode forward, recorded on the tape. Batchnorm running statistics are
/// updated when update_stats is set.
template <class T>
BasicTensor<T> forward_train(BasicClassifierParams<T>& params, const BasicTensor<T>& batch, Rng& rng, Tape<T>& tape,
                             bool update_stats = true);

/// Eval-mode logits: running statistics, dropout off.
template <class T>
BasicTensor<T> forward_eval(const BasicClassifierParams<T>& params, const BasicTensor<T>& batch);

/// Post-ReLU fc1 activations (B x fc1_width) in eval mode.
Tensor extract_fc1(const ClassifierParams& params, const Tensor& batch);

/// Flattens per-layer tape gradients into trainable() order.
template <class T>
std::vector<BasicTensor<T>> parameter_gradients(std::vector<LayerGradients<T>>&& layers);

/// Eval logits for a large batch, processed in chunks of `chunk` rows.
Tensor logits_chunked(const ClassifierParams& params, const Tensor& batch, std::size_t chunk = 128);

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const float> row);

struct HeadPrediction {
  std::size_t label;
  float confidence;  // max softmax probability
};

std::vector<HeadPrediction> predict_head(const Tensor& logits, double temperature = 1.0);

struct FactoredClassifier {
  ClassifierParams pitch;      // 11 classes
  ClassifierParams secondary;  // 7 classes
};

struct JointPrediction {
  std::size_t pitch;
  std::size_t secondary;
  float pitch_confidence;
  float secondary_confidence;
};

std::vector<JointPrediction> predict_joint(const FactoredClassifier& model, const Tensor& batch,
                                           double pitch_temperature = 1.0, double secondary_temperature = 1.0);

// ---- .glyf model files -----------------------------------------------------

inline constexpr char kModelMagic[4] = {'G', 'L', 'Y', 'F'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize(const ClassifierParams& params);
ClassifierParams deserialize(std::string_view bytes);

void save_model(const ClassifierParams& params, const std::string& path);
ClassifierParams load_model(const std::string& path);

/// Hex FNV-1a of the serialized model.
std::string model_fingerprint(const ClassifierParams& params);

}  // namespace glyphforge
