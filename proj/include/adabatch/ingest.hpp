#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "adabatch/loss.hpp"
#include "adabatch/sample_shape.hpp"
#include "adabatch/tensor.hpp"

namespace adabatch {

enum class Split { train, test };

// N samples as rows of an N x D feature matrix plus class indices.
struct Dataset {
  Tensor features;
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;
  SampleShape shape;

  std::size_t size() const noexcept { return labels.size(); }
  // Throws DataError on out-of-range labels, non-finite features or a
  // feature width that disagrees with `shape`.
  void validate() const;
};

Dataset select_rows(const Dataset& data, std::span<const std::size_t> indices);

// CIFAR-10 binary: records of 1 label byte (0-9) and 3072 pixel bytes,
// channel-major (1024 R, 1024 G, 1024 B), each channel row-major 32x32.
// Pixels are scaled to [0, 1].
inline constexpr std::size_t kCifarRecordBytes = 3073;
Dataset read_cifar10_bin(std::span<const std::filesystem::path> paths, Split split = Split::train);
// Inverse of read_cifar10_bin for 3x32x32 data in [0, 1] (rounded to bytes).
void write_cifar10_bin(const std::filesystem::path& path, const Dataset& data);

// IDX (MNIST-style): big-endian u16 zero, u8 dtype (0x08 unsigned byte),
// u8 rank, rank x u32 extents, payload.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};
IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
// Rank-3 images + rank-1 labels -> Dataset with pixels scaled to [0, 1].
Dataset idx_dataset(const IdxArray& images, const IdxArray& labels, Split split);

struct SynthSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;  // into the generated pool
  std::vector<std::size_t> test_indices;
};

// Gaussian blobs around class centers of norm `radius`: a centered regular
// simplex when classes <= dim, seeded random directions otherwise. The pool
// of classes * per_class samples is split 80/20 by a seeded permutation.
SynthSplit synth_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                       double spread, std::uint64_t seed, double radius = 2.0,
                       SampleShape shape = {});

struct SubsetResult {
  Dataset data;
  std::vector<std::size_t> indices;  // ascending, into the source dataset
  bool stratified = true;            // false: fell back to plain sampling
};

// Seeded class-stratified sample of k rows: floor(k / M) per class with the
// remainder going to the lowest class ids. Falls back to uniform sampling
// without replacement when some class is too small.
SubsetResult subset(const Dataset& data, std::size_t k, std::uint64_t seed);

}  // namespace adabatch
