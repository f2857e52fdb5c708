#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "adabatch/layers.hpp"
#include "adabatch/optim.hpp"
#include "adabatch/rng.hpp"
#include "adabatch/sample_shape.hpp"

namespace adabatch {

enum class LayerKind { fc, conv, bn };

struct LayerSpec {
  LayerKind kind = LayerKind::fc;
  std::size_t out = 0;  // fc outputs or conv output channels
  std::size_t k1 = 1, k2 = 1, s1 = 1, s2 = 1;
  Activation activation = Activation::identity;
  double eps = 1e-5;
  bool tied_bias = false;

  bool operator==(const LayerSpec&) const = default;
};

template <class T>
using AnyLayer = std::variant<FcLayer<T>, ConvLayer<T>, BnLayer<T>>;

template <class T>
struct NamedTensor {
  std::string name;
  BasicTensor<T>* tensor;
};

struct LayerFlops {
  std::string name;
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
};

// Ordered FC/conv/BN stack ending in a softmax cross-entropy head. Input
// batches are features x r matrices; conv layers see them as
// [r][channels][height][width] and the network converts at the boundaries.
template <class T>
class Network {
 public:
  Network() = default;
  Network(SampleShape input, std::vector<AnyLayer<T>> layers);

  // Validates shape composition and initializes weights from rng.
  static Network build(SampleShape input, const std::vector<LayerSpec>& specs, Rng& rng);

  // Training forward; caches for backward. Returns logits (classes x r).
  BasicTensor<T> forward(const BasicTensor<T>& x);
  // Read-only forward (BN uses running statistics).
  BasicTensor<T> infer(const BasicTensor<T>& x) const;

  // Backpropagates dE/dlogits, adds parameter gradients into the gradient
  // buffers (call zero_grads first for a fresh step) and returns dE/dx.
  BasicTensor<T> backward(const BasicTensor<T>& grad_logits);
  void zero_grads();

  std::vector<ParamSlot<T>> param_slots();
  std::vector<NamedTensor<T>> params();
  // Params plus non-trainable buffers (BN running statistics).
  std::vector<NamedTensor<T>> state_tensors();
  const std::vector<BasicTensor<T>>& grads() const { return grads_; }

  std::size_t num_classes() const;
  const SampleShape& input_shape() const { return input_; }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<AnyLayer<T>>& layers() const { return layers_; }
  std::vector<AnyLayer<T>>& layers() { return layers_; }

  std::vector<LayerFlops> layer_flops(std::uint64_t r) const;
  std::uint64_t forward_flops(std::uint64_t r) const;
  std::uint64_t backward_flops(std::uint64_t r) const;

 private:
  void wire();

  SampleShape input_;
  std::vector<AnyLayer<T>> layers_;
  std::vector<SampleShape> in_shapes_;  // per layer
  std::vector<BasicTensor<T>> grads_;   // aligned with param_slots()
};

// features x r <-> [r][c][h][w]
template <class T>
BasicTensor<T> columns_to_images(const BasicTensor<T>& cols, const SampleShape& shape);
template <class T>
BasicTensor<T> images_to_columns(const BasicTensor<T>& images);

}  // namespace adabatch
