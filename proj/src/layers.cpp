#include "adabatch/layers.hpp"

#include <atomic>
#include <cmath>

#include "adabatch/kernels.hpp"
#include "adabatch/parallel.hpp"

namespace adabatch {

namespace testing {
namespace {
std::atomic<bool> g_corrupt{false};
}
void set_corrupt_backward(bool on) noexcept { g_corrupt.store(on); }
bool corrupt_backward() noexcept { return g_corrupt.load(); }
}  // namespace testing

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) noexcept {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

template <class T>
T activate(Activation a, T x) noexcept {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > T{0} ? x : T{0};
    case Activation::sigmoid: return T{1} / (T{1} + std::exp(-x));
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

template <class T>
T activate_derivative(Activation a, T x) noexcept {
  switch (a) {
    case Activation::identity: return T{1};
    case Activation::relu: return x > T{0} ? T{1} : T{0};
    case Activation::sigmoid: {
      const T s = T{1} / (T{1} + std::exp(-x));
      return s * (T{1} - s);
    }
    case Activation::tanh: {
      const T t = std::tanh(x);
      return T{1} - t * t;
    }
  }
  return T{1};
}

namespace {

template <class T>
BasicTensor<T> apply(Activation a, BasicTensor<T> x) {
  if (a == Activation::identity) return x;
  for (auto& v : x.data()) v = activate(a, v);
  return x;
}

// grad <- grad o f'(pre)
template <class T>
BasicTensor<T> times_derivative(Activation a, const BasicTensor<T>& grad,
                                const BasicTensor<T>& pre) {
  require_same_shape(grad.shape(), pre.shape(), "activation backward");
  BasicTensor<T> out = grad;
  if (a == Activation::identity) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= activate_derivative(a, pre[i]);
  return out;
}

[[noreturn]] void backward_before_forward(const char* layer) {
  throw StateError(std::string(layer) + ": backward called before forward");
}

}  // namespace

// ---------------------------------------------------------------------------
// FC

template <class T>
FcLayer<T>::FcLayer(BasicTensor<T> weights, BasicTensor<T> bias, Activation act)
    : weights_(std::move(weights)), bias_(std::move(bias)), act_(act) {
  if (weights_.rank() != 2) {
    throw DimensionError("fc weights must be a matrix, got " + shape_string(weights_.shape()));
  }
  if (bias_.rank() != 1 || bias_.size() != weights_.rows()) {
    throw DimensionError("fc bias " + shape_string(bias_.shape()) + " does not match weights " +
                         shape_string(weights_.shape()));
  }
}

template <class T>
FcLayer<T> FcLayer<T>::initialized(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  BasicTensor<T> w({out, in});
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& v : w.data()) v = static_cast<T>(std_dev * rng.normal());
  return FcLayer(std::move(w), BasicTensor<T>({out}), act);
}

template <class T>
BasicTensor<T> FcLayer<T>::infer(const BasicTensor<T>& x) const {
  if (x.rank() != 2 || x.rows() != in_features()) {
    throw DimensionError("fc forward: expected " + std::to_string(in_features()) +
                         " x r input, got " + shape_string(x.shape()));
  }
  BasicTensor<T> y = matmul(weights_, x);
  add_column_broadcast(y, bias_);
  return apply(act_, std::move(y));
}

template <class T>
BasicTensor<T> FcLayer<T>::forward(const BasicTensor<T>& x) {
  if (x.rank() != 2 || x.rows() != in_features()) {
    throw DimensionError("fc forward: expected " + std::to_string(in_features()) +
                         " x r input, got " + shape_string(x.shape()));
  }
  BasicTensor<T> y = matmul(weights_, x);
  add_column_broadcast(y, bias_);
  cache_x_ = x;
  cache_y_ = y;
  return apply(act_, std::move(y));
}

template <class T>
FcGrads<T> FcLayer<T>::backward(const BasicTensor<T>& grad_out) const {
  if (!cache_x_ || !cache_y_) backward_before_forward("fc");
  const BasicTensor<T> v = times_derivative(act_, grad_out, *cache_y_);
  FcGrads<T> g{matmul(transpose(weights_), v), matmul(v, transpose(*cache_x_)),
               row_reduce(v, Reduce::sum)};
  if (testing::corrupt_backward()) g.weights[0] += T(1e-3);
  return g;
}

template <class T>
std::uint64_t FcLayer<T>::forward_flops(std::uint64_t r) const {
  const std::uint64_t m = out_features(), n = in_features();
  return 2 * m * n * r + 2 * m * r;
}

template <class T>
std::uint64_t FcLayer<T>::backward_flops(std::uint64_t r) const {
  const std::uint64_t m = out_features(), n = in_features();
  return 4 * m * n * r + 2 * m * r;
}

// ---------------------------------------------------------------------------
// Convolution

template <class T>
BasicTensor<T> conv2d_single(const ConvGeometry& geom, const BasicTensor<T>& kernel,
                             const BasicTensor<T>& input) {
  geom.validate();
  require_same_shape(kernel.shape(), {geom.k1, geom.k2}, "conv2d_single kernel");
  require_same_shape(input.shape(), {geom.m, geom.n}, "conv2d_single input");
  BasicTensor<T> out({geom.out_rows(), geom.out_cols()});
  const BasicTensor<T> zero_bias({1});
  kernels::conv_forward<T>(input.data(), kernel.data(), zero_bias.data(), out.data(), geom, 1, 1,
                           1, true, kernels::Exec::serial);
  return out;
}

template <class T>
BasicTensor<T> stride_rotate_select(const BasicTensor<T>& kernel, std::size_t s1, std::size_t s2,
                                    std::size_t offset_rows, std::size_t offset_cols) {
  if (kernel.rank() != 2) {
    throw DimensionError("stride_rotate_select: expected a matrix, got " +
                         shape_string(kernel.shape()));
  }
  if (s1 == 0 || s2 == 0) throw DimensionError("stride_rotate_select: zero stride");
  const std::size_t k1 = kernel.rows(), k2 = kernel.cols();
  const std::size_t n1 = offset_rows < k1 ? (k1 - 1 - offset_rows) / s1 + 1 : 0;
  const std::size_t n2 = offset_cols < k2 ? (k2 - 1 - offset_cols) / s2 + 1 : 0;
  if (n1 == 0 || n2 == 0) return BasicTensor<T>({1, 1});
  BasicTensor<T> out({n1, n2});
  for (std::size_t a = 0; a < n1; ++a)
    for (std::size_t b = 0; b < n2; ++b)
      out(a, b) = kernel(offset_rows + (n1 - 1 - a) * s1, offset_cols + (n2 - 1 - b) * s2);
  return out;
}

template <class T>
ConvLayer<T>::ConvLayer(ConvGeometry geom, BasicTensor<T> weights, BasicTensor<T> bias,
                        Activation act, bool tied_bias)
    : geom_(geom), weights_(std::move(weights)), bias_(std::move(bias)), act_(act),
      tied_(tied_bias) {
  geom_.validate();
  if (weights_.rank() != 4 || weights_.extent(2) != geom_.k1 || weights_.extent(3) != geom_.k2) {
    throw DimensionError("conv weights " + shape_string(weights_.shape()) +
                         " do not match kernel " + geom_.describe());
  }
  const Shape want = tied_ ? Shape{out_channels(), 1, 1}
                           : Shape{out_channels(), geom_.out_rows(), geom_.out_cols()};
  require_same_shape(bias_.shape(), want, "conv bias");
}

template <class T>
ConvLayer<T> ConvLayer<T>::initialized(ConvGeometry geom, std::size_t in_channels,
                                       std::size_t out_channels, Activation act, bool tied_bias,
                                       Rng& rng) {
  geom.validate();
  BasicTensor<T> w({out_channels, in_channels, geom.k1, geom.k2});
  const double fan_in = static_cast<double>(in_channels * geom.k1 * geom.k2);
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data()) v = static_cast<T>(std_dev * rng.normal());
  BasicTensor<T> b(tied_bias ? Shape{out_channels, 1, 1}
                             : Shape{out_channels, geom.out_rows(), geom.out_cols()});
  return ConvLayer(geom, std::move(w), std::move(b), act, tied_bias);
}

template <class T>
BasicTensor<T> ConvLayer<T>::pre_activation(const BasicTensor<T>& input) const {
  if (input.rank() != 4 || input.extent(1) != in_channels() || input.extent(2) != geom_.m ||
      input.extent(3) != geom_.n) {
    throw DimensionError("conv forward: expected [r][" + std::to_string(in_channels()) + "][" +
                         std::to_string(geom_.m) + "][" + std::to_string(geom_.n) +
                         "] input, got " + shape_string(input.shape()));
  }
  const std::size_t r = input.extent(0);
  BasicTensor<T> c({r, out_channels(), geom_.out_rows(), geom_.out_cols()});
  kernels::conv_forward<T>(input.data(), weights_.data(), bias_.data(), c.data(), geom_, r,
                           in_channels(), out_channels(), tied_, kernels::current_exec());
  return c;
}

template <class T>
BasicTensor<T> ConvLayer<T>::infer(const BasicTensor<T>& input) const {
  return apply(act_, pre_activation(input));
}

template <class T>
BasicTensor<T> ConvLayer<T>::forward(const BasicTensor<T>& input) {
  BasicTensor<T> c = pre_activation(input);
  cache_a_ = input;
  cache_c_ = c;
  return apply(act_, std::move(c));
}

template <class T>
ConvGrads<T> ConvLayer<T>::backward(const BasicTensor<T>& grad_out) const {
  if (!cache_a_ || !cache_c_) backward_before_forward("conv");
  const BasicTensor<T> g = times_derivative(act_, grad_out, *cache_c_);
  const std::size_t r = g.extent(0);
  const auto exec = kernels::current_exec();

  ConvGrads<T> out{BasicTensor<T>(cache_a_->shape()), BasicTensor<T>(weights_.shape()),
                   BasicTensor<T>(bias_.shape())};
  kernels::conv_backward_input<T>(g.data(), weights_.data(), out.input.data(), geom_, r,
                                  in_channels(), out_channels(), exec);
  kernels::conv_backward_weights<T>(g.data(), cache_a_->data(), out.weights.data(), geom_, r,
                                    in_channels(), out_channels(), exec);

  const std::size_t plane = geom_.out_rows() * geom_.out_cols();
  for (std::size_t o = 0; o < out_channels(); ++o) {
    for (std::size_t p = 0; p < plane; ++p) {
      T acc{0};
      for (std::size_t b = 0; b < r; ++b) acc += g[(b * out_channels() + o) * plane + p];
      if (tied_) {
        out.bias[o] += acc;
      } else {
        out.bias[o * plane + p] = acc;
      }
    }
  }
  return out;
}

template <class T>
std::uint64_t ConvLayer<T>::forward_flops(std::uint64_t r) const {
  const std::uint64_t pairs = in_channels() * out_channels();
  const std::uint64_t plane = geom_.out_rows() * geom_.out_cols();
  return pairs * (2 * geom_.k1 * geom_.k2 * plane * r + plane * r) +
         out_channels() * plane * r;
}

template <class T>
std::uint64_t ConvLayer<T>::backward_flops(std::uint64_t r) const {
  const std::uint64_t pairs = in_channels() * out_channels();
  const std::uint64_t plane = geom_.out_rows() * geom_.out_cols();
  return pairs * (2 * geom_.taps_rows() * geom_.taps_cols() * geom_.m * geom_.n * r +
                  2 * geom_.k1 * geom_.k2 * plane * r);
}

// ---------------------------------------------------------------------------
// Batch normalization

template <class T>
BnLayer<T>::BnLayer(std::size_t features, T eps, Activation act)
    : scale_({features}, T{1}), bias_({features}), running_mean_({features}),
      running_var_({features}, T{1}), eps_(eps), act_(act) {
  if (!(eps > T{0})) throw ConfigError("batch norm eps must be > 0");
}

template <class T>
const BasicTensor<T>& BnLayer<T>::normalized() const {
  if (!cache_) throw StateError("bn: no forward pass cached");
  return cache_->xhat;
}

template <class T>
BasicTensor<T> BnLayer<T>::forward(const BasicTensor<T>& x) {
  if (x.rank() != 2 || x.rows() != features()) {
    throw DimensionError("bn forward: expected " + std::to_string(features()) +
                         " x r input, got " + shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), r = x.cols();
  const T rt = static_cast<T>(r);
  const T sqrt_r = std::sqrt(rt);
  Cache c{BasicTensor<T>(x.shape()), BasicTensor<T>({m}), BasicTensor<T>(x.shape()),
          BasicTensor<T>(x.shape())};
  const bool par = kernels::current_exec() == kernels::Exec::parallel;
  const int threads = parallel::num_threads();

#pragma omp parallel for schedule(static) num_threads(threads) if (par)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(m); ++si) {
    const auto i = static_cast<std::size_t>(si);
    T sum{0};
    for (std::size_t j = 0; j < r; ++j) sum += x(i, j);
    const T mean = sum / rt;
    T sq{0};
    for (std::size_t j = 0; j < r; ++j) {
      const T y = (x(i, j) - mean) / sqrt_r;
      c.y(i, j) = y;
      sq += y * y;
    }
    const T d = std::sqrt(sq + eps_);
    c.d[i] = d;
    for (std::size_t j = 0; j < r; ++j) {
      const T xhat = sqrt_r * c.y(i, j) / d;
      c.xhat(i, j) = xhat;
      c.z(i, j) = scale_[i] * xhat + bias_[i];
    }
    // sum_j y_ij^2 is the biased batch variance.
    const T mom = static_cast<T>(kRunningMomentum);
    running_mean_[i] = (T{1} - mom) * running_mean_[i] + mom * mean;
    running_var_[i] = (T{1} - mom) * running_var_[i] + mom * sq;
  }

  BasicTensor<T> out = apply(act_, c.z);
  cache_ = std::move(c);
  return out;
}

template <class T>
BasicTensor<T> BnLayer<T>::infer(const BasicTensor<T>& x) const {
  if (x.rank() != 2 || x.rows() != features()) {
    throw DimensionError("bn forward: expected " + std::to_string(features()) +
                         " x r input, got " + shape_string(x.shape()));
  }
  BasicTensor<T> z(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T d = std::sqrt(running_var_[i] + eps_);
    for (std::size_t j = 0; j < x.cols(); ++j)
      z(i, j) = scale_[i] * ((x(i, j) - running_mean_[i]) / d) + bias_[i];
  }
  return apply(act_, std::move(z));
}

template <class T>
BnGrads<T> BnLayer<T>::backward(const BasicTensor<T>& grad_out) const {
  if (!cache_) backward_before_forward("bn");
  const Cache& c = *cache_;
  const BasicTensor<T> v = times_derivative(act_, grad_out, c.z);
  const std::size_t m = v.rows(), r = v.cols();
  const T rt = static_cast<T>(r);
  BnGrads<T> g{BasicTensor<T>(v.shape()), BasicTensor<T>({m}), BasicTensor<T>({m})};
  const bool par = kernels::current_exec() == kernels::Exec::parallel;
  const int threads = parallel::num_threads();

#pragma omp parallel for schedule(static) num_threads(threads) if (par)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(m); ++si) {
    const auto i = static_cast<std::size_t>(si);
    // Row means for the centering projector applied to Y and V.
    T y_sum{0}, v_sum{0}, vy{0}, vx{0};
    for (std::size_t j = 0; j < r; ++j) {
      y_sum += c.y(i, j);
      v_sum += v(i, j);
      vy += v(i, j) * c.y(i, j);   // row of (V o Y) e e^T
      vx += v(i, j) * c.xhat(i, j);
    }
    const T y_mean = y_sum / rt, v_mean = v_sum / rt;
    const T d = c.d[i];
    const T d2 = d * d;
    const T w_over_d = scale_[i] / d;
    for (std::size_t j = 0; j < r; ++j) {
      const T y_hat = c.y(i, j) - y_mean;  // Y (I - ee^T/r), already centered
      const T v_hat = v(i, j) - v_mean;
      g.input(i, j) = w_over_d * (v_hat - (vy * y_hat) / d2);
    }
    g.scale[i] = vx;
    g.bias[i] = v_sum;
  }
  return g;
}

#define ADABATCH_INSTANTIATE(T)                                                             \
  template T activate<T>(Activation, T) noexcept;                                           \
  template T activate_derivative<T>(Activation, T) noexcept;                                \
  template class FcLayer<T>;                                                                \
  template class ConvLayer<T>;                                                              \
  template class BnLayer<T>;                                                                \
  template BasicTensor<T> conv2d_single(const ConvGeometry&, const BasicTensor<T>&,         \
                                        const BasicTensor<T>&);                             \
  template BasicTensor<T> stride_rotate_select(const BasicTensor<T>&, std::size_t,          \
                                               std::size_t, std::size_t, std::size_t);

ADABATCH_INSTANTIATE(float)
ADABATCH_INSTANTIATE(double)
#undef ADABATCH_INSTANTIATE

}  // namespace adabatch
