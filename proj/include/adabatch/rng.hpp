#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace adabatch {

// Seeded generator. The raw stream is std::mt19937_64, which the C++
// standard fixes bit-for-bit, so equal seeds give equal streams everywhere.
// Distributions are implemented here rather than taken from <random>, whose
// distribution algorithms vary between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) by rejection, n >= 1.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller (no cached pair, so the stream position
  // depends only on the number of calls).
  double normal();

  // Fisher-Yates shuffled 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace adabatch
