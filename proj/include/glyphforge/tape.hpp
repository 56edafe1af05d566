#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "glyphforge/layers.hpp"

namespace glyphforge {

template <class T>
struct LayerGradients {
  BasicTensor<T> d_input;                 // empty for the first layer when input grads are off
  std::vector<BasicTensor<T>> d_params;   // in the layer's parameter order
};

/// Records a forward pass through a layer sequence so it can be
/// differentiated once. Parameter tensors are referenced, not copied; they
/// must outlive the call to backward().
template <class T>
class Tape {
 public:
  struct Options {
    bool input_grad = true;     // compute d_input for the first layer
    bool keep_all_grads = true;  // keep d_input of every layer, not only the first
    bool track_signature = false;
  };

  Tape() = default;
  explicit Tape(Options options) : options_(options) {}

  BasicTensor<T> conv2d(BasicTensor<T> x, const BasicTensor<T>& kernels, const BasicTensor<T>& bias);
  BasicTensor<T> relu(BasicTensor<T> x);
  BasicTensor<T> batchnorm2d(BasicTensor<T> x, const BasicTensor<T>& scale, const BasicTensor<T>& shift,
                             RunningStats<T>* stats, Mode mode);
  BasicTensor<T> maxpool2d(BasicTensor<T> x);
  BasicTensor<T> dropout(BasicTensor<T> x, double p, Mode mode, Rng& rng);
  BasicTensor<T> flatten(BasicTensor<T> x);
  BasicTensor<T> linear(BasicTensor<T> x, const BasicTensor<T>& weights, const BasicTensor<T>& bias);

  /// Gradients for every recorded layer, in forward order. A tape can be
  /// replayed only once.
  std::vector<LayerGradients<T>> backward(const BasicTensor<T>& d_output);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Hash of every ReLU on/off pattern and pooling argmax seen so far; two
  /// passes with equal signatures lie in the same differentiable region.
  /// Only maintained with Options::track_signature.
  std::uint64_t activation_signature() const noexcept { return signature_; }

 private:
  struct ConvNode {
    BasicTensor<T> input;
    const BasicTensor<T>* kernels;
  };
  struct ReluNode {
    std::vector<std::uint8_t> active;
  };
  struct BatchNormNode {
    BatchNormCache<T> cache;
    const BasicTensor<T>* scale;
  };
  struct PoolNode {
    Shape input_shape;
    std::vector<std::uint32_t> argmax;
  };
  struct DropoutNode {
    std::vector<T> mask;
  };
  struct FlattenNode {
    Shape input_shape;
  };
  struct LinearNode {
    BasicTensor<T> input;
    const BasicTensor<T>* weights;
  };
  using Node = std::variant<ConvNode, ReluNode, BatchNormNode, PoolNode, DropoutNode, FlattenNode, LinearNode>;

  void check_open() const;
  void mix(std::uint64_t v) noexcept { signature_ = (signature_ ^ v) * 0x100000001b3ULL; }

  std::vector<Node> nodes_;
  Options options_;
  bool consumed_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace glyphforge
