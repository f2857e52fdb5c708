#include "adabatch/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adabatch/error.hpp"

namespace adabatch {

namespace {

void check_target(std::size_t classes, Label target) {
  if (target >= classes) {
    throw DimensionError("target class " + std::to_string(target) + " out of range for " +
                         std::to_string(classes) + " classes");
  }
}

}  // namespace

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T shift = *std::max_element(logits.begin(), logits.end());
  T total{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - shift);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

template <class T>
T ce_value(std::span<const T> probs, Label target) {
  check_target(probs.size(), target);
  return -std::log(probs[target]);
}

template <class T>
std::vector<T> ce_softmax_grad(std::span<const T> probs, Label target) {
  check_target(probs.size(), target);
  std::vector<T> g(probs.begin(), probs.end());
  g[target] -= T{1};
  return g;
}

template <class T>
LossBatch<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const Label> targets) {
  if (logits.rank() != 2 || logits.cols() != targets.size()) {
    throw DimensionError("loss: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t classes = logits.rows(), r = logits.cols();
  LossBatch<T> out{BasicTensor<T>(logits.shape()), BasicTensor<T>(logits.shape()), {}, 0.0, 0.0};
  out.per_sample.resize(r);
  std::vector<T> column(classes);
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < classes; ++i) column[i] = logits(i, j);
    const std::vector<T> p = softmax<T>(column);
    const T e = ce_value<T>(p, targets[j]);
    for (std::size_t i = 0; i < classes; ++i) {
      out.probs(i, j) = p[i];
      out.grad(i, j) = p[i];
    }
    out.grad(targets[j], j) -= T{1};
    out.per_sample[j] = static_cast<double>(e);
    out.sum += static_cast<double>(e);
  }
  out.mean = out.sum / static_cast<double>(r);
  return out;
}

double batch_mean_of_means(std::span<const std::vector<double>> batch_losses) {
  EpochLossAccumulator acc;
  for (const auto& b : batch_losses) {
    double s = 0.0;
    for (double e : b) s += e;
    acc.add_batch(s, b.size());
  }
  return acc.mean_of_batch_means();
}

double dataset_mean(std::span<const std::vector<double>> batch_losses) {
  EpochLossAccumulator acc;
  for (const auto& b : batch_losses) {
    double s = 0.0;
    for (double e : b) s += e;
    acc.add_batch(s, b.size());
  }
  return acc.dataset_mean();
}

void EpochLossAccumulator::add_batch(double batch_sum, std::size_t batch_size) {
  if (batch_size == 0) return;
  sum_ += batch_sum;
  means_sum_ += batch_sum / static_cast<double>(batch_size);
  samples_ += batch_size;
  ++batches_;
}

#define ADABATCH_INSTANTIATE(T)                                                        \
  template std::vector<T> softmax<T>(std::span<const T>);                              \
  template T ce_value<T>(std::span<const T>, Label);                                   \
  template std::vector<T> ce_softmax_grad<T>(std::span<const T>, Label);               \
  template LossBatch<T> softmax_cross_entropy<T>(const BasicTensor<T>&, std::span<const Label>);

ADABATCH_INSTANTIATE(float)
ADABATCH_INSTANTIATE(double)
#undef ADABATCH_INSTANTIATE

}  // namespace adabatch
