#pragma once

#include <cstddef>
#include <string>

namespace adabatch {

// Strided 2-D convolution geometry. The caller pads the input so that
// (m - k1) % s1 == 0 and (n - k2) % s2 == 0; nothing is padded implicitly.
struct ConvGeometry {
  std::size_t m = 1, n = 1;    // input height, width
  std::size_t k1 = 1, k2 = 1;  // kernel height, width
  std::size_t s1 = 1, s2 = 1;  // vertical, horizontal stride

  ConvGeometry() = default;
  ConvGeometry(std::size_t m, std::size_t n, std::size_t k1, std::size_t k2, std::size_t s1,
               std::size_t s2);

  // Throws DimensionError when the divisibility or size constraints fail.
  void validate() const;

  std::size_t out_rows() const noexcept { return (m - k1) / s1 + 1; }
  std::size_t out_cols() const noexcept { return (n - k2) / s2 + 1; }
  // Maximum number of kernel taps touching one input position per axis.
  std::size_t taps_rows() const noexcept { return (k1 - 1) / s1 + 1; }
  std::size_t taps_cols() const noexcept { return (k2 - 1) / s2 + 1; }

  std::string describe() const;
  bool operator==(const ConvGeometry&) const = default;
};

}  // namespace adabatch
