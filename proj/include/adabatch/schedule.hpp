#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace adabatch {

inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

// Piecewise-constant batch growth coupled with learning-rate decay.
//
// Every interval_epochs the batch is multiplied by batch_multiplier (beta)
// and the learning rate by lr_decay (d), so the per-sample step alpha/r
// shrinks by d/beta per interval. beta = 1 is a plain step-decay schedule
// with a fixed batch; d = 1 is pure batch growth.
//
// With warmup_epochs > 0 the rate ramps linearly per iteration from base_lr
// to base_lr * base_batch / warmup_ref_batch over the warmup epochs; decay
// then applies to that scaled target. Growth intervals count from epoch 0
// regardless of warmup.
struct AdaBatchSchedule {
  double base_lr = 0.01;
  std::size_t base_batch = 128;
  std::size_t interval_epochs = 20;
  double lr_decay = 1.0;
  std::size_t batch_multiplier = 1;
  std::size_t warmup_epochs = 0;
  std::size_t warmup_ref_batch = 256;
  std::size_t max_batch = kUnlimited;
  std::size_t micro_batch_cap = kUnlimited;
  std::size_t total_epochs = 100;

  // Throws ConfigError naming the offending field.
  void validate() const;

  std::size_t interval_index(std::size_t epoch) const { return epoch / interval_epochs; }

  // min(r0 * beta^floor(e / interval), max_batch, dataset_size)
  std::size_t batch_size_at(std::size_t epoch, std::size_t dataset_size = kUnlimited) const;

  // Rate for iteration `iter` of `iters_in_epoch` in `epoch`.
  double lr_at(std::size_t epoch, std::size_t iter, std::size_t iters_in_epoch) const;

  // lr_decay^interval_index, by repeated multiplication so that schedules
  // whose decays differ by a power of two stay exactly proportional.
  double decay_factor(std::size_t epoch) const;

  double warmup_target() const;

  bool operator==(const AdaBatchSchedule&) const = default;
};

struct ScheduleRow {
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;  // rate at the epoch's first iteration
  double effective_lr = 0.0;
  bool warmup_active = false;
  std::size_t micro_batches_per_step = 1;
  std::size_t iterations = 0;

  bool operator==(const ScheduleRow&) const = default;
};

inline double effective_lr(double lr, std::size_t batch_size) {
  return lr / static_cast<double>(batch_size);
}

std::vector<ScheduleRow> expand(const AdaBatchSchedule& s, std::size_t dataset_size);

// True iff the per-epoch effective learning rates agree within 1e-15
// relative. Both schedules must share total_epochs and interval_epochs.
bool effective_equivalent(const AdaBatchSchedule& a, const AdaBatchSchedule& b);

}  // namespace adabatch
