#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adabatch/config.hpp"
#include "adabatch/pipeline.hpp"

namespace adabatch {

// Everything one training run owns, built from a RunConfig.
template <class T>
class Experiment {
 public:
  explicit Experiment(RunConfig config);
  // Same, with datasets supplied by the caller (already standardized).
  Experiment(RunConfig config, Dataset train, Dataset test);

  // Trains from the current epoch to the end of the schedule.
  std::vector<EpochLog> run(TrainOptions options = {});

  void save(const std::filesystem::path& path);
  // Restores weights, optimizer and RNG; training continues after the
  // checkpoint's epoch.
  void resume(const std::filesystem::path& path);

  const RunConfig& config() const { return config_; }
  const Dataset& train_set() const { return train_; }
  const Dataset& test_set() const { return test_; }
  Network<T>& net() { return net_; }
  SgdState<T>& optimizer() { return opt_; }
  Rng& rng() { return rng_; }
  std::size_t next_epoch() const { return next_epoch_; }

 private:
  RunConfig config_;
  Dataset train_, test_;
  Network<T> net_;
  SgdState<T> opt_;
  Rng rng_;
  std::size_t next_epoch_ = 0;
};

// Desk-scale figure analogs bundled with the tool.
struct ReproArm {
  std::string name;
  RunConfig config;
};

struct ReproPlan {
  std::string id;
  std::string description;
  std::vector<ReproArm> arms;
};

std::vector<std::string> repro_ids();
// Throws ConfigError listing the valid ids for an unknown one.
ReproPlan repro_plan(const std::string& id, const std::filesystem::path& data_dir = {});

struct ArmResult {
  std::string name;
  AdaBatchSchedule schedule;
  std::vector<EpochLog> logs;
  double final_error() const { return logs.empty() ? 100.0 : logs.back().test_error; }
};

struct ReproVerdict {
  std::string label;
  bool pass = false;
  bool gating = true;
};

struct ReproSummary {
  std::vector<ReproVerdict> verdicts;
  std::string text;
  bool pass() const;
};

// Compares the arms of a finished plan against the plan's thresholds.
ReproSummary summarize_repro(const ReproPlan& plan, const std::vector<ArmResult>& results);

// Mean wall seconds per epoch over epochs whose batch size is r.
double mean_epoch_seconds(const std::vector<EpochLog>& logs, std::size_t r);

}  // namespace adabatch
