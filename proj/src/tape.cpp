#include "glyphforge/tape.hpp"

namespace glyphforge {

template <class T>
void Tape<T>::check_open() const {
  require(!consumed_, ErrorCode::invalid_state, "tape already replayed; run a new forward pass");
}

template <class T>
BasicTensor<T> Tape<T>::conv2d(BasicTensor<T> x, const BasicTensor<T>& kernels, const BasicTensor<T>& bias) {
  check_open();
  auto y = conv2d_forward(x, kernels, bias);
  nodes_.emplace_back(ConvNode{std::move(x), &kernels});
  return y;
}

template <class T>
BasicTensor<T> Tape<T>::relu(BasicTensor<T> x) {
  check_open();
  std::vector<std::uint8_t> active(x.size());
  T* v = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    active[i] = v[i] > T{0};
    v[i] = active[i] ? v[i] : T{0};
  }
  if (options_.track_signature) {
    std::uint64_t word = 0;
    std::size_t bits = 0;
    for (auto a : active) {
      word = (word << 1) | a;
      if (++bits == 64) {
        mix(word);
        word = 0;
        bits = 0;
      }
    }
    mix(word ^ bits);
  }
  nodes_.emplace_back(ReluNode{std::move(active)});
  return x;
}

template <class T>
BasicTensor<T> Tape<T>::batchnorm2d(BasicTensor<T> x, const BasicTensor<T>& scale, const BasicTensor<T>& shift,
                                    RunningStats<T>* stats, Mode mode) {
  check_open();
  BatchNormNode node{{}, &scale};
  auto y = batchnorm2d_forward(x, scale, shift, stats, mode, &node.cache);
  nodes_.emplace_back(std::move(node));
  return y;
}

template <class T>
BasicTensor<T> Tape<T>::maxpool2d(BasicTensor<T> x) {
  check_open();
  auto r = maxpool2d_forward(x);
  if (options_.track_signature)
    for (auto idx : r.argmax) mix(idx);
  nodes_.emplace_back(PoolNode{x.shape(), std::move(r.argmax)});
  return std::move(r.output);
}

template <class T>
BasicTensor<T> Tape<T>::dropout(BasicTensor<T> x, double p, Mode mode, Rng& rng) {
  check_open();
  auto r = dropout_forward(x, p, mode, rng);
  nodes_.emplace_back(DropoutNode{std::move(r.mask)});
  return std::move(r.output);
}

template <class T>
BasicTensor<T> Tape<T>::flatten(BasicTensor<T> x) {
  check_open();
  require(x.rank() >= 2, ErrorCode::shape_mismatch, "flatten: input needs a batch axis");
  Shape in = x.shape();
  const std::size_t batch = in[0];
  auto y = std::move(x).reshaped({batch, shape_numel(in) / batch});
  nodes_.emplace_back(FlattenNode{std::move(in)});
  return y;
}

template <class T>
BasicTensor<T> Tape<T>::linear(BasicTensor<T> x, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
  check_open();
  auto y = linear_forward(x, weights, bias);
  nodes_.emplace_back(LinearNode{std::move(x), &weights});
  return y;
}

template <class T>
std::vector<LayerGradients<T>> Tape<T>::backward(const BasicTensor<T>& d_output) {
  check_open();
  consumed_ = true;
  std::vector<LayerGradients<T>> grads(nodes_.size());
  BasicTensor<T> upstream = d_output;
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    const bool want_input = options_.input_grad || k > 0;
    auto& out = grads[k];
    std::visit(
        [&](auto& node) {
          using N = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<N, ConvNode>) {
            auto g = conv2d_backward(node.input, *node.kernels, upstream, want_input);
            out.d_input = std::move(g.d_input);
            out.d_params = {std::move(g.d_kernels), std::move(g.d_bias)};
            node.input = {};
          } else if constexpr (std::is_same_v<N, ReluNode>) {
            require(node.active.size() == upstream.size(), ErrorCode::shape_mismatch, "relu backward: shape mismatch");
            T* g = upstream.data();
            for (std::size_t i = 0; i < upstream.size(); ++i) g[i] = node.active[i] ? g[i] : T{0};
            out.d_input = std::move(upstream);
            node.active = {};
          } else if constexpr (std::is_same_v<N, BatchNormNode>) {
            auto g = batchnorm2d_backward(node.cache, *node.scale, upstream);
            out.d_input = std::move(g.d_input);
            out.d_params = {std::move(g.d_scale), std::move(g.d_shift)};
            node.cache = {};
          } else if constexpr (std::is_same_v<N, PoolNode>) {
            out.d_input = maxpool2d_backward(node.input_shape, node.argmax, upstream);
          } else if constexpr (std::is_same_v<N, DropoutNode>) {
            out.d_input = dropout_backward(node.mask, upstream);
          } else if constexpr (std::is_same_v<N, FlattenNode>) {
            out.d_input = std::move(upstream).reshaped(node.input_shape);
          } else if constexpr (std::is_same_v<N, LinearNode>) {
            auto g = linear_backward(node.input, *node.weights, upstream, want_input);
            out.d_input = std::move(g.d_input);
            out.d_params = {std::move(g.d_weights), std::move(g.d_bias)};
            node.input = {};
          }
        },
        nodes_[k]);
    if (k > 0) {
      if (options_.keep_all_grads)
        upstream = out.d_input;
      else
        upstream = std::move(out.d_input);
    }
  }
  return grads;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace glyphforge
