#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adabatch/tensor.hpp"

namespace adabatch {

using Label = std::uint32_t;

// Max-shifted softmax of one logit vector.
template <class T>
std::vector<T> softmax(std::span<const T> logits);

// -log p[target]
template <class T>
T ce_value(std::span<const T> probs, Label target);

// p - z* for a one-hot target.
template <class T>
std::vector<T> ce_softmax_grad(std::span<const T> probs, Label target);

// Softmax cross-entropy over an M x r logit batch.
template <class T>
struct LossBatch {
  BasicTensor<T> probs;      // M x r, columns sum to 1
  BasicTensor<T> grad;       // M x r, P - Z*
  std::vector<double> per_sample;
  double sum = 0.0;
  double mean = 0.0;
};

template <class T>
LossBatch<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const Label> targets);

// Mean of per-batch means over an epoch, (1/q) sum_t (1/r_t) sum_s E.
double batch_mean_of_means(std::span<const std::vector<double>> batch_losses);

// Plain mean over every sample of every batch.
double dataset_mean(std::span<const std::vector<double>> batch_losses);

// Accumulates both epoch loss conventions without storing per-sample values.
class EpochLossAccumulator {
 public:
  void add_batch(double batch_sum, std::size_t batch_size);
  double dataset_mean() const { return samples_ ? sum_ / static_cast<double>(samples_) : 0.0; }
  double mean_of_batch_means() const {
    return batches_ ? means_sum_ / static_cast<double>(batches_) : 0.0;
  }

 private:
  double sum_ = 0.0;
  double means_sum_ = 0.0;
  std::size_t samples_ = 0;
  std::size_t batches_ = 0;
};

}  // namespace adabatch
