#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "adabatch/ingest.hpp"
#include "adabatch/network.hpp"
#include "adabatch/optim.hpp"
#include "adabatch/schedule.hpp"

namespace adabatch {

inline constexpr int kConfigVersion = 1;

struct DatasetConfig {
  std::string kind = "synth";  // synth | cifar10 | idx

  // synth: classes x per_class samples of dimension input.features()
  std::size_t classes = 10;
  std::size_t per_class = 200;
  double spread = 1.0;
  double radius = 2.0;

  // cifar10
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;

  // idx
  std::string train_images, train_labels, test_images, test_labels;

  std::size_t subset = 0;       // stratified train subset size, 0 = all
  std::size_t test_subset = 0;  // same for the test split
  bool standardize = true;

  bool operator==(const DatasetConfig&) const = default;
};

struct RunConfig {
  int config_version = kConfigVersion;
  std::uint64_t seed = 0;
  std::string precision = "f64";  // f64 | f32
  std::string output_dir = "runs/default";
  std::size_t eval_batch = 256;
  SampleShape input;
  std::vector<LayerSpec> layers;
  DatasetConfig dataset;
  SgdConfig optimizer;
  AdaBatchSchedule schedule;

  bool operator==(const RunConfig&) const = default;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// JSON; unknown keys are rejected. Throws ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

// Seeds derived from RunConfig::seed for independent streams.
std::uint64_t data_seed(const RunConfig& c);
std::uint64_t init_seed(const RunConfig& c);
std::uint64_t shuffle_seed(const RunConfig& c);

// Loads or generates the train/test splits, applies subsets and
// standardization (train statistics). Throws DataError for missing files.
std::pair<Dataset, Dataset> materialize_dataset(const RunConfig& config);

// Training-split size without loading the data (reads file headers only).
std::size_t planned_train_size(const RunConfig& config);

}  // namespace adabatch
