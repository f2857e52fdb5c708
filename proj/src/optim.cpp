#include "adabatch/optim.hpp"

#include "adabatch/error.hpp"

namespace adabatch {

void SgdConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("optimizer.momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
}

template <class T>
void SgdState<T>::step(std::span<const ParamSlot<T>> params, double lr, std::size_t batch_size) {
  if (batch_size == 0) throw DimensionError("sgd_step: batch size must be >= 1");
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.value->shape());
  }
  if (velocity_.size() != params.size()) {
    throw DimensionError("sgd_step: parameter count changed from " +
                         std::to_string(velocity_.size()) + " to " +
                         std::to_string(params.size()));
  }
  const T rt = static_cast<T>(batch_size);
  const T alpha = static_cast<T>(lr);
  const T mu = static_cast<T>(config_.momentum);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamSlot<T>& p = params[k];
    require_same_shape(p.value->shape(), p.grad->shape(), "sgd_step");
    require_same_shape(p.value->shape(), velocity_[k].shape(), "sgd_step velocity");
    const bool decay = !(config_.bn_decay_exempt && p.is_bn);
    const T lambda = decay ? static_cast<T>(config_.weight_decay) : T{0};
    BasicTensor<T>& w = *p.value;
    BasicTensor<T>& u = velocity_[k];
    const BasicTensor<T>& dw = *p.grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      T g = dw[i] / rt;
      if (lambda != T{0}) g += lambda * w[i];
      u[i] = mu * u[i] + g;
      w[i] -= alpha * u[i];
    }
  }
}

template <class T>
void sgd_step(BasicTensor<T>& param, const BasicTensor<T>& grad, double lr,
              std::size_t batch_size, SgdState<T>& state) {
  const ParamSlot<T> slot{"param", &param, &grad, false};
  state.step(std::span<const ParamSlot<T>>(&slot, 1), lr, batch_size);
}

template <class T>
UpdateComparison<T> effective_update_equivalence(const BasicTensor<T>& weights,
                                                 std::span<const BasicTensor<T>> micro_grads,
                                                 double lr, std::size_t micro_batch,
                                                 const SgdConfig& config,
                                                 const BasicTensor<T>& velocity) {
  if (micro_grads.empty()) throw DimensionError("effective_update_equivalence: no gradients");
  if (micro_batch == 0) throw DimensionError("effective_update_equivalence: batch must be >= 1");
  const std::size_t beta = micro_grads.size();
  BasicTensor<T> sum(weights.shape());
  BasicTensor<T> mean(weights.shape());
  for (const auto& g : micro_grads) {
    require_same_shape(weights.shape(), g.shape(), "effective_update_equivalence");
    axpy(sum, T{1}, g);
    axpy(mean, T{1} / static_cast<T>(micro_batch), g);
  }
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] /= static_cast<T>(beta);

  auto run = [&](const BasicTensor<T>& grad, std::size_t batch) {
    SgdState<T> state(config);
    BasicTensor<T> w = weights;
    if (!velocity.empty()) state.velocity().push_back(velocity);
    sgd_step(w, grad, lr, batch, state);
    return w;
  };
  UpdateComparison<T> out;
  out.accumulated = run(sum, beta * micro_batch);
  out.averaged = run(mean, 1);
  out.max_abs_diff = static_cast<double>(max_abs_diff(out.accumulated, out.averaged));
  return out;
}

template class SgdState<float>;
template class SgdState<double>;
template void sgd_step(BasicTensor<float>&, const BasicTensor<float>&, double, std::size_t,
                       SgdState<float>&);
template void sgd_step(BasicTensor<double>&, const BasicTensor<double>&, double, std::size_t,
                       SgdState<double>&);
template UpdateComparison<float> effective_update_equivalence(
    const BasicTensor<float>&, std::span<const BasicTensor<float>>, double, std::size_t,
    const SgdConfig&, const BasicTensor<float>&);
template UpdateComparison<double> effective_update_equivalence(
    const BasicTensor<double>&, std::span<const BasicTensor<double>>, double, std::size_t,
    const SgdConfig&, const BasicTensor<double>&);

}  // namespace adabatch
