#include "adabatch/tensor.hpp"

#include <cmath>

#include "adabatch/kernels.hpp"

namespace adabatch {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

namespace {

template <class T>
void require_matrix(const BasicTensor<T>& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  BasicTensor<T> c({a.rows(), b.cols()});
  kernels::matmul<T>(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(),
                     kernels::current_exec());
  return c;
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_matrix(a, "transpose");
  BasicTensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "hadamard");
  BasicTensor<T> c(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
  return c;
}

template <class T>
BasicTensor<T> row_reduce(const BasicTensor<T>& a, Reduce kind) {
  require_matrix(a, "row_reduce");
  BasicTensor<T> out({a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T acc{0};
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j);
    out[i] = kind == Reduce::mean ? acc / static_cast<T>(a.cols()) : acc;
  }
  return out;
}

template <class T>
void add_column_broadcast(BasicTensor<T>& a, const BasicTensor<T>& v) {
  require_matrix(a, "add_column_broadcast");
  if (v.size() != a.rows()) {
    throw DimensionError("add_column_broadcast: vector " + shape_string(v.shape()) +
                         " does not match rows of " + shape_string(a.shape()));
  }
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) += v[i];
}

template <class T>
void axpy(BasicTensor<T>& a, T scale, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

template <class T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

#define ADABATCH_INSTANTIATE(T)                                                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                       \
  template BasicTensor<T> hadamard(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> row_reduce(const BasicTensor<T>&, Reduce);              \
  template void add_column_broadcast(BasicTensor<T>&, const BasicTensor<T>&);     \
  template void axpy(BasicTensor<T>&, T, const BasicTensor<T>&);                  \
  template T max_abs_diff(const BasicTensor<T>&, const BasicTensor<T>&);

ADABATCH_INSTANTIATE(float)
ADABATCH_INSTANTIATE(double)
#undef ADABATCH_INSTANTIATE

}  // namespace adabatch
