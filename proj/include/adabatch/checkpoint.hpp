#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "adabatch/network.hpp"
#include "adabatch/optim.hpp"
#include "adabatch/rng.hpp"
#include "adabatch/tensor.hpp"

namespace adabatch {

// Binary layout, little-endian throughout:
//   "ADAB"  u32 version
//   u64 record count, then per record:
//     u64 name length, name bytes, u64 rank, rank x u64 extents, f64 values
//   u64 rng state length, rng state bytes
//   u64 next epoch
// Records are the network state tensors in registry order followed by one
// "velocity.<param>" record per optimizer buffer.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
  bool operator==(const CheckpointRecord&) const = default;
};

struct CheckpointData {
  std::vector<CheckpointRecord> records;
  std::string rng_state;
  std::uint64_t next_epoch = 0;
  bool operator==(const CheckpointData&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
// Throws FormatError on bad magic, version mismatch or truncation.
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

template <class T>
CheckpointData capture(Network<T>& net, const SgdState<T>& opt, const Rng& rng,
                       std::uint64_t next_epoch);
// Restores into a network of the same architecture; returns the next epoch.
template <class T>
std::uint64_t restore(const CheckpointData& data, Network<T>& net, SgdState<T>& opt, Rng& rng);

template <class T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& net, const SgdState<T>& opt,
                     const Rng& rng, std::uint64_t next_epoch);
template <class T>
std::uint64_t load_checkpoint(const std::filesystem::path& path, Network<T>& net,
                              SgdState<T>& opt, Rng& rng);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace adabatch
