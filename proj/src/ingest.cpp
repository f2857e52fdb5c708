#include "adabatch/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "adabatch/error.hpp"
#include "adabatch/rng.hpp"

namespace adabatch {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw DataError("dataset features " + shape_string(features.shape()) + " vs " +
                    std::to_string(labels.size()) + " labels");
  }
  if (features.cols() != shape.features()) {
    throw DataError("dataset feature width " + std::to_string(features.cols()) +
                    " does not match sample shape of " + std::to_string(shape.features()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                      " out of range for " + std::to_string(num_classes) + " classes");
    }
  }
  for (double v : features.data()) {
    if (!std::isfinite(v)) throw DataError("dataset contains non-finite feature values");
  }
}

Dataset select_rows(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("select_rows: empty selection");
  const std::size_t d = data.features.cols();
  Tensor features({indices.size(), d});
  std::vector<Label> labels(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t src = indices[k];
    if (src >= data.size()) throw DataError("select_rows: index out of range");
    std::copy_n(data.features.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                features.data().begin() + static_cast<std::ptrdiff_t>(k * d));
    labels[k] = data.labels[src];
  }
  return Dataset{std::move(features), std::move(labels), data.num_classes, data.split, data.shape};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary

Dataset read_cifar10_bin(std::span<const std::filesystem::path> paths, Split split) {
  constexpr std::size_t pixels = kCifarRecordBytes - 1;
  std::vector<double> features;
  std::vector<Label> labels;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecordBytes != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of 3073; trailing record starts at byte offset " +
                        std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes));
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    for (std::size_t rec = 0; rec < n; ++rec) {
      const std::size_t off = rec * kCifarRecordBytes;
      if (bytes[off] > 9) {
        throw FormatError(path.string() + ": label byte " + std::to_string(bytes[off]) +
                          " > 9 at byte offset " + std::to_string(off));
      }
      labels.push_back(bytes[off]);
      for (std::size_t p = 0; p < pixels; ++p) features.push_back(bytes[off + 1 + p] / 255.0);
    }
  }
  if (labels.empty()) throw FormatError("CIFAR-10 input contains no records");
  const std::size_t n = labels.size();
  return Dataset{Tensor({n, pixels}, std::move(features)), std::move(labels), 10, split,
                 SampleShape{3, 32, 32}};
}

void write_cifar10_bin(const std::filesystem::path& path, const Dataset& data) {
  if (data.features.cols() != kCifarRecordBytes - 1) {
    throw DataError("write_cifar10_bin: samples must have 3072 features");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.put(static_cast<char>(data.labels[i]));
    for (std::size_t p = 0; p < kCifarRecordBytes - 1; ++p) {
      const double v = std::clamp(data.features(i, p), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// IDX

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX: header truncated");
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("IDX: leading bytes must be zero");
  if (bytes[2] != 0x08) {
    throw FormatError("IDX: unsupported dtype code " + std::to_string(bytes[2]) +
                      " (only 0x08 unsigned byte)");
  }
  const std::size_t rank = bytes[3];
  if (rank == 0) throw FormatError("IDX: rank must be >= 1");
  if (bytes.size() < 4 + 4 * rank) throw FormatError("IDX: dimension header truncated");
  IdxArray arr;
  std::size_t expected = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t o = 4 + 4 * d;
    const std::uint32_t ext = (std::uint32_t{bytes[o]} << 24) | (std::uint32_t{bytes[o + 1]} << 16) |
                              (std::uint32_t{bytes[o + 2]} << 8) | std::uint32_t{bytes[o + 3]};
    arr.dims.push_back(ext);
    expected *= ext;
  }
  const std::size_t header = 4 + 4 * rank;
  const std::size_t actual = bytes.size() - header;
  if (actual != expected) {
    throw FormatError("IDX: payload length mismatch, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(actual));
  }
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return arr;
}

IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_idx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Dataset idx_dataset(const IdxArray& images, const IdxArray& labels, Split split) {
  if (images.dims.size() != 3) throw FormatError("IDX images must have rank 3");
  if (labels.dims.size() != 1) throw FormatError("IDX labels must have rank 1");
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) {
    throw FormatError("IDX: " + std::to_string(n) + " images but " +
                      std::to_string(labels.dims[0]) + " labels");
  }
  if (n == 0) throw FormatError("IDX: no samples");
  const std::size_t h = images.dims[1], w = images.dims[2];
  std::vector<double> features(images.data.size());
  std::transform(images.data.begin(), images.data.end(), features.begin(),
                 [](std::uint8_t b) { return b / 255.0; });
  std::vector<Label> lab(labels.data.begin(), labels.data.end());
  const std::size_t classes = 1 + *std::max_element(lab.begin(), lab.end());
  return Dataset{Tensor({n, h * w}, std::move(features)), std::move(lab), std::max<std::size_t>(classes, 2),
                 split, SampleShape{1, h, w}};
}

// ---------------------------------------------------------------------------
// Synthetic blobs

SynthSplit synth_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                       double spread, std::uint64_t seed, double radius, SampleShape shape) {
  if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (per_class < 2) throw ConfigError("synth: per_class must be >= 2");
  if (dim < 1) throw ConfigError("synth: dim must be >= 1");
  if (!(spread >= 0.0) || !(radius > 0.0)) throw ConfigError("synth: spread >= 0 and radius > 0 required");
  if (shape.features() == 1 && dim != 1) shape = SampleShape{dim, 1, 1};
  if (shape.features() != dim) throw ConfigError("synth: sample shape does not match dim");

  Rng rng(seed);
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& v = centers[c];
    if (num_classes <= dim) {
      for (std::size_t j = 0; j < num_classes; ++j)
        v[j] = (j == c ? 1.0 : 0.0) - 1.0 / static_cast<double>(num_classes);
    } else {
      for (auto& x : v) x = rng.normal();
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x *= radius / norm;
  }

  const std::size_t n = num_classes * per_class;
  Tensor pool({n, dim});
  std::vector<Label> labels(n);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t row = c * per_class + s;
      labels[row] = static_cast<Label>(c);
      for (std::size_t j = 0; j < dim; ++j) pool(row, j) = centers[c][j] + spread * rng.normal();
    }
  }
  Dataset all{std::move(pool), std::move(labels), num_classes, Split::train, shape};

  auto perm = rng.permutation(n);
  const std::size_t n_train = (n * 4) / 5;
  SynthSplit out;
  out.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  out.train = select_rows(all, out.train_indices);
  out.test = select_rows(all, out.test_indices);
  out.test.split = Split::test;
  return out;
}

// ---------------------------------------------------------------------------
// Subset

SubsetResult subset(const Dataset& data, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > data.size()) {
    throw ConfigError("subset size " + std::to_string(k) + " must be in [1, " +
                      std::to_string(data.size()) + "]");
  }
  Rng rng(seed);
  const std::size_t classes = data.num_classes;
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

  SubsetResult out;
  std::vector<std::size_t> quota(classes, k / classes);
  for (std::size_t c = 0; c < k % classes; ++c) ++quota[c];
  for (std::size_t c = 0; c < classes; ++c) {
    if (quota[c] > by_class[c].size()) out.stratified = false;
  }

  if (out.stratified) {
    for (std::size_t c = 0; c < classes; ++c) {
      const auto perm = rng.permutation(by_class[c].size());
      for (std::size_t q = 0; q < quota[c]; ++q) out.indices.push_back(by_class[c][perm[q]]);
    }
  } else {
    const auto perm = rng.permutation(data.size());
    out.indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(out.indices.begin(), out.indices.end());
  out.data = select_rows(data, out.indices);
  return out;
}

}  // namespace adabatch
