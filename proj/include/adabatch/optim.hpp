#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adabatch/tensor.hpp"

namespace adabatch {

struct SgdConfig {
  double momentum = 0.0;      // mu in [0, 1)
  double weight_decay = 0.0;  // lambda >= 0
  bool bn_decay_exempt = false;

  void validate() const;
  bool operator==(const SgdConfig&) const = default;
};

// One trainable tensor and its batch-summed gradient.
template <class T>
struct ParamSlot {
  std::string name;
  BasicTensor<T>* value = nullptr;
  const BasicTensor<T>* grad = nullptr;
  bool is_bn = false;
};

// SGD with momentum and weight decay:
//   g = grad / r + lambda W,  u <- mu u + g,  W <- W - alpha u.
// With mu = lambda = 0 this is W - alpha * (grad / r). Gradients are batch
// sums; the 1/r normalization happens here, never in the layers. Velocity
// buffers persist unchanged when the batch size changes.
template <class T>
class SgdState {
 public:
  explicit SgdState(SgdConfig config = {}) : config_(config) { config_.validate(); }

  void step(std::span<const ParamSlot<T>> params, double lr, std::size_t batch_size);

  const SgdConfig& config() const { return config_; }

  // Velocity per parameter, in the order of the first step (empty before it).
  const std::vector<BasicTensor<T>>& velocity() const { return velocity_; }
  std::vector<BasicTensor<T>>& velocity() { return velocity_; }

 private:
  SgdConfig config_;
  std::vector<BasicTensor<T>> velocity_;
};

// Single-parameter convenience form of SgdState::step.
template <class T>
void sgd_step(BasicTensor<T>& param, const BasicTensor<T>& grad, double lr,
              std::size_t batch_size, SgdState<T>& state);

template <class T>
struct UpdateComparison {
  BasicTensor<T> accumulated;  // one step on sum_i dW_i with batch beta * r
  BasicTensor<T> averaged;     // one step on mean_i (dW_i / r) with batch 1
  double max_abs_diff = 0.0;
};

// Compares the two ways of applying beta micro-batch gradient sums taken at
// the same weights. Both paths start from `velocity` (zeros when empty).
template <class T>
UpdateComparison<T> effective_update_equivalence(const BasicTensor<T>& weights,
                                                 std::span<const BasicTensor<T>> micro_grads,
                                                 double lr, std::size_t micro_batch,
                                                 const SgdConfig& config,
                                                 const BasicTensor<T>& velocity = {});

}  // namespace adabatch
