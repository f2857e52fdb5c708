#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "adabatch/conv_geometry.hpp"
#include "adabatch/rng.hpp"
#include "adabatch/tensor.hpp"

namespace adabatch {

enum class Activation { identity, relu, sigmoid, tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a) noexcept;

template <class T>
T activate(Activation a, T x) noexcept;

// f'(x) evaluated at the pre-activation x. relu'(0) is 0.
template <class T>
T activate_derivative(Activation a, T x) noexcept;

// ---------------------------------------------------------------------------
// Fully connected: Y = W X + b e^T, Z = f(Y). X is n x r (one sample per column).

template <class T>
struct FcGrads {
  BasicTensor<T> input;    // n x r
  BasicTensor<T> weights;  // m x n, batch sum V X^T
  BasicTensor<T> bias;     // m, batch sum of V
};

template <class T>
class FcLayer {
 public:
  FcLayer(BasicTensor<T> weights, BasicTensor<T> bias, Activation act);

  // Fan-in scaled normal init (std sqrt(2 / n)), zero bias.
  static FcLayer initialized(std::size_t in, std::size_t out, Activation act, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x);
  BasicTensor<T> infer(const BasicTensor<T>& x) const;
  FcGrads<T> backward(const BasicTensor<T>& grad_out) const;

  std::size_t in_features() const { return weights_.cols(); }
  std::size_t out_features() const { return weights_.rows(); }
  Activation activation() const { return act_; }

  BasicTensor<T>& weights() { return weights_; }
  const BasicTensor<T>& weights() const { return weights_; }
  BasicTensor<T>& bias() { return bias_; }
  const BasicTensor<T>& bias() const { return bias_; }

  // 2mnr + 2mr forward (product, bias, activation); 4mnr + 2mr backward.
  std::uint64_t forward_flops(std::uint64_t r) const;
  std::uint64_t backward_flops(std::uint64_t r) const;

 private:
  BasicTensor<T> weights_;
  BasicTensor<T> bias_;
  Activation act_;
  std::optional<BasicTensor<T>> cache_x_;
  std::optional<BasicTensor<T>> cache_y_;
};

// ---------------------------------------------------------------------------
// 2-D strided convolution. theta_gh = sum_ij w_ij a_{k1+g'-i, k2+h'-j}
// (1-based, g' = (g-1)s1 + 1): a true convolution with the kernel rotated by
// 180 degrees, not a cross-correlation.

template <class T>
BasicTensor<T> conv2d_single(const ConvGeometry& geom, const BasicTensor<T>& kernel,
                             const BasicTensor<T>& input);

// Selects kernel rows offset_rows, offset_rows + s1, ... and columns
// offset_cols, offset_cols + s2, ... (0-based), then rotates the selection
// by 180 degrees. This is the selection/permutation product P^T W Q realised
// with index arithmetic. An empty selection yields a 1x1 zero.
template <class T>
BasicTensor<T> stride_rotate_select(const BasicTensor<T>& kernel, std::size_t s1, std::size_t s2,
                                    std::size_t offset_rows = 0, std::size_t offset_cols = 0);

template <class T>
struct ConvGrads {
  BasicTensor<T> input;    // [r][cin][m][n]
  BasicTensor<T> weights;  // [cout][cin][k1][k2], batch sum
  BasicTensor<T> bias;     // bias shape, batch sum
};

template <class T>
class ConvLayer {
 public:
  // weights [cout][cin][k1][k2]; bias [cout][m'][n'] (or [cout][1][1] when tied).
  ConvLayer(ConvGeometry geom, BasicTensor<T> weights, BasicTensor<T> bias, Activation act,
            bool tied_bias = false);

  static ConvLayer initialized(ConvGeometry geom, std::size_t in_channels,
                               std::size_t out_channels, Activation act, bool tied_bias,
                               Rng& rng);

  // input [r][cin][m][n] -> output [r][cout][m'][n']
  BasicTensor<T> forward(const BasicTensor<T>& input);
  BasicTensor<T> infer(const BasicTensor<T>& input) const;
  ConvGrads<T> backward(const BasicTensor<T>& grad_out) const;

  const ConvGeometry& geometry() const { return geom_; }
  std::size_t in_channels() const { return weights_.extent(1); }
  std::size_t out_channels() const { return weights_.extent(0); }
  Activation activation() const { return act_; }
  bool tied_bias() const { return tied_; }

  BasicTensor<T>& weights() { return weights_; }
  const BasicTensor<T>& weights() const { return weights_; }
  BasicTensor<T>& bias() { return bias_; }
  const BasicTensor<T>& bias() const { return bias_; }

  // Per (out, in) kernel pair: 2 k1 k2 m' n' r + m' n' r forward and
  // 2 k1' k2' m n r + 2 k1 k2 m' n' r backward; activation m' n' r per out channel.
  std::uint64_t forward_flops(std::uint64_t r) const;
  std::uint64_t backward_flops(std::uint64_t r) const;

 private:
  BasicTensor<T> pre_activation(const BasicTensor<T>& input) const;

  ConvGeometry geom_;
  BasicTensor<T> weights_;
  BasicTensor<T> bias_;
  Activation act_;
  bool tied_;
  std::optional<BasicTensor<T>> cache_a_;
  std::optional<BasicTensor<T>> cache_c_;
};

// ---------------------------------------------------------------------------
// Batch normalization over the columns of an m x r batch:
//   Y = X (I - ee^T/r) / sqrt(r),  d_i = sqrt(sum_j y_ij^2 + eps),
//   Xhat = sqrt(r) D^-1 Y,  Z = W Xhat + b e^T, output f(Z).
// W is diagonal, stored as the vector `scale`.

template <class T>
struct BnGrads {
  BasicTensor<T> input;  // m x r
  BasicTensor<T> scale;  // m, sum_j v_ij xhat_ij
  BasicTensor<T> bias;   // m, sum_j v_ij
};

template <class T>
class BnLayer {
 public:
  static constexpr double kDefaultEps = 1e-5;
  static constexpr double kRunningMomentum = 0.1;

  explicit BnLayer(std::size_t features, T eps = T(kDefaultEps),
                   Activation act = Activation::identity);

  BasicTensor<T> forward(const BasicTensor<T>& x);
  // Uses the running statistics, so each column is normalized independently.
  BasicTensor<T> infer(const BasicTensor<T>& x) const;
  BnGrads<T> backward(const BasicTensor<T>& grad_out) const;

  std::size_t features() const { return scale_.size(); }
  T eps() const { return eps_; }
  Activation activation() const { return act_; }

  BasicTensor<T>& scale() { return scale_; }
  const BasicTensor<T>& scale() const { return scale_; }
  BasicTensor<T>& bias() { return bias_; }
  const BasicTensor<T>& bias() const { return bias_; }
  BasicTensor<T>& running_mean() { return running_mean_; }
  const BasicTensor<T>& running_mean() const { return running_mean_; }
  BasicTensor<T>& running_var() { return running_var_; }
  const BasicTensor<T>& running_var() const { return running_var_; }

  // Cached normalized batch from the last forward.
  const BasicTensor<T>& normalized() const;

  std::uint64_t forward_flops(std::uint64_t r) const { return 8 * features() * r; }
  std::uint64_t backward_flops(std::uint64_t r) const { return 12 * features() * r; }

 private:
  struct Cache {
    BasicTensor<T> y;     // centered, scaled by 1/sqrt(r)
    BasicTensor<T> d;     // diag of D
    BasicTensor<T> xhat;
    BasicTensor<T> z;     // pre-activation
  };

  BasicTensor<T> scale_;
  BasicTensor<T> bias_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  T eps_;
  Activation act_;
  std::optional<Cache> cache_;
};

namespace testing {
// Negative-control hook: when set, FC weight gradients are perturbed so that
// gradient checks must fail.
void set_corrupt_backward(bool on) noexcept;
bool corrupt_backward() noexcept;
}  // namespace testing

}  // namespace adabatch
