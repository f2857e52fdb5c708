#include "adabatch/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adabatch/error.hpp"

namespace adabatch {

void AdaBatchSchedule::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("schedule." + field + " " + why);
  };
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) fail("base_lr", "must be > 0");
  if (base_batch < 1) fail("base_batch", "must be >= 1");
  if (interval_epochs < 1) fail("interval_epochs", "must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay", "must be in (0, 1]");
  if (batch_multiplier < 1) fail("batch_multiplier", "must be >= 1");
  if (warmup_ref_batch < 1) fail("warmup_ref_batch", "must be >= 1");
  if (max_batch < 1) fail("max_batch", "must be >= 1");
  if (micro_batch_cap < 1) fail("micro_batch_cap", "must be >= 1");
  if (total_epochs < 1) fail("total_epochs", "must be >= 1");
}

std::size_t AdaBatchSchedule::batch_size_at(std::size_t epoch, std::size_t dataset_size) const {
  if (epoch >= total_epochs) {
    throw Error("epoch " + std::to_string(epoch) + " out of range for " +
                std::to_string(total_epochs) + " epochs");
  }
  const std::size_t cap = std::min(max_batch, dataset_size);
  std::size_t r = base_batch;
  for (std::size_t k = interval_index(epoch); k > 0 && r < cap; --k) {
    if (r > cap / batch_multiplier) {
      r = cap;
      break;
    }
    r *= batch_multiplier;
  }
  return std::min(r, cap);
}

double AdaBatchSchedule::decay_factor(std::size_t epoch) const {
  double f = 1.0;
  for (std::size_t k = interval_index(epoch); k > 0; --k) f *= lr_decay;
  return f;
}

double AdaBatchSchedule::warmup_target() const {
  return base_lr * static_cast<double>(base_batch) / static_cast<double>(warmup_ref_batch);
}

double AdaBatchSchedule::lr_at(std::size_t epoch, std::size_t iter,
                               std::size_t iters_in_epoch) const {
  if (warmup_epochs == 0) return base_lr * decay_factor(epoch);
  const double target = warmup_target();
  if (epoch < warmup_epochs) {
    const std::size_t total = warmup_epochs * iters_in_epoch;
    const std::size_t k = epoch * iters_in_epoch + iter;
    if (total <= 1 || k + 1 >= total) return target;
    return base_lr + (target - base_lr) * static_cast<double>(k) / static_cast<double>(total - 1);
  }
  return target * decay_factor(epoch);
}

std::vector<ScheduleRow> expand(const AdaBatchSchedule& s, std::size_t dataset_size) {
  s.validate();
  if (s.base_batch > dataset_size) {
    throw ConfigError("schedule.base_batch " + std::to_string(s.base_batch) +
                      " exceeds dataset size " + std::to_string(dataset_size));
  }
  std::vector<ScheduleRow> rows;
  rows.reserve(s.total_epochs);
  for (std::size_t e = 0; e < s.total_epochs; ++e) {
    ScheduleRow row;
    row.epoch = e;
    row.batch_size = s.batch_size_at(e, dataset_size);
    row.iterations = dataset_size == kUnlimited
                         ? 1
                         : (dataset_size + row.batch_size - 1) / row.batch_size;
    row.lr = s.lr_at(e, 0, row.iterations);
    row.effective_lr = effective_lr(row.lr, row.batch_size);
    row.warmup_active = e < s.warmup_epochs;
    row.micro_batches_per_step = (row.batch_size + s.micro_batch_cap - 1) / s.micro_batch_cap;
    rows.push_back(row);
  }
  return rows;
}

bool effective_equivalent(const AdaBatchSchedule& a, const AdaBatchSchedule& b) {
  if (a.total_epochs != b.total_epochs || a.interval_epochs != b.interval_epochs) {
    throw ConfigError("effective-LR comparison needs equal total_epochs and interval_epochs");
  }
  const auto ra = expand(a, kUnlimited);
  const auto rb = expand(b, kUnlimited);
  for (std::size_t e = 0; e < ra.size(); ++e) {
    const double x = ra[e].effective_lr, y = rb[e].effective_lr;
    if (std::abs(x - y) > 1e-15 * std::max(std::abs(x), std::abs(y))) return false;
  }
  return true;
}

}  // namespace adabatch
