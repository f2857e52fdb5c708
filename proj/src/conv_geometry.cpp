#include "adabatch/conv_geometry.hpp"

#include "adabatch/error.hpp"

namespace adabatch {

ConvGeometry::ConvGeometry(std::size_t m_, std::size_t n_, std::size_t k1_, std::size_t k2_,
                           std::size_t s1_, std::size_t s2_)
    : m(m_), n(n_), k1(k1_), k2(k2_), s1(s1_), s2(s2_) {
  validate();
}

void ConvGeometry::validate() const {
  if (m == 0 || n == 0 || k1 == 0 || k2 == 0 || s1 == 0 || s2 == 0) {
    throw DimensionError("conv geometry has a zero extent: " + describe());
  }
  if (k1 > m || k2 > n) throw DimensionError("conv kernel larger than input: " + describe());
  if ((m - k1) % s1 != 0 || (n - k2) % s2 != 0) {
    throw DimensionError("conv geometry not divisible (pad the input): " + describe());
  }
}

std::string ConvGeometry::describe() const {
  return "input " + std::to_string(m) + "x" + std::to_string(n) + ", kernel " +
         std::to_string(k1) + "x" + std::to_string(k2) + ", stride " + std::to_string(s1) + "x" +
         std::to_string(s2);
}

}  // namespace adabatch
