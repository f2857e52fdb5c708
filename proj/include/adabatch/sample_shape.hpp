#pragma once

#include <cstddef>

namespace adabatch {

// Layout of one sample. Vector data uses channels = D, height = width = 1.
struct SampleShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t features() const noexcept { return channels * height * width; }
  bool operator==(const SampleShape&) const = default;
};

}  // namespace adabatch
