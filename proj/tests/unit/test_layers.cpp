#include "doctest.h"

#include <cmath>
#include <numeric>

#include "adabatch/layers.hpp"
#include "adabatch/parallel.hpp"
#include "support/oracles.hpp"

using namespace adabatch;
using oracle::normwise_rel;
using oracle::numeric_grad;
using oracle::random_tensor;
using oracle::weighted_sum;

namespace {

constexpr Activation kActs[] = {Activation::identity, Activation::relu, Activation::sigmoid,
                                Activation::tanh};

// Symbolic kernel: entry (g, h), 1-based, holds 10 g + h.
Tensor symbolic_kernel(std::size_t rows, std::size_t cols) {
  Tensor w({rows, cols});
  for (std::size_t g = 0; g < rows; ++g)
    for (std::size_t h = 0; h < cols; ++h) w(g, h) = 10.0 * (g + 1) + (h + 1);
  return w;
}

Tensor permute_columns(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, perm[j]);
  return out;
}

Tensor permute_samples(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  const std::size_t plane = x.size() / x.extent(0);
  for (std::size_t b = 0; b < perm.size(); ++b)
    std::copy_n(x.data().begin() + perm[b] * plane, plane, out.data().begin() + b * plane);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// activations

TEST_CASE("activation derivatives") {
  CHECK(activate_derivative(Activation::relu, 0.0) == 0.0);
  CHECK(activate_derivative(Activation::relu, 2.0) == 1.0);
  CHECK(activate(Activation::relu, -3.0) == 0.0);
  CHECK(activate_derivative(Activation::sigmoid, 0.0) == doctest::Approx(0.25));
  CHECK(activate_derivative(Activation::tanh, 0.0) == 1.0);
  CHECK(parse_activation("tanh") == Activation::tanh);
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

// ---------------------------------------------------------------------------
// fully connected

TEST_CASE("fc forward examples") {
  FcLayer<double> id(Tensor::identity(2), Tensor({2}), Activation::identity);
  CHECK(id.forward(Tensor::matrix(2, 1, {1, 2})) == Tensor::matrix(2, 1, {1, 2}));

  FcLayer<double> fc(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::vector({1, 1}), Activation::relu);
  // y = [1 - 2 + 1, 3 - 4 + 1] = [0, 0]
  CHECK(fc.forward(Tensor::matrix(2, 1, {1, -1})) == Tensor::matrix(2, 1, {0, 0}));
}

TEST_CASE("fc backward: identity layer passes the gradient through; r = 1 gives an outer product") {
  FcLayer<double> id(Tensor::identity(3), Tensor({3}), Activation::identity);
  Rng rng(5);
  const Tensor x = random_tensor({3, 4}, rng);
  id.forward(x);
  const Tensor v = random_tensor({3, 4}, rng);
  CHECK(id.backward(v).input == v);

  FcLayer<double> fc(random_tensor({2, 3}, rng), Tensor({2}), Activation::identity);
  const Tensor x1 = random_tensor({3, 1}, rng);
  fc.forward(x1);
  const Tensor v1 = random_tensor({2, 1}, rng);
  const auto g = fc.backward(v1);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.weights(i, j) == v1(i, 0) * x1(j, 0));
}

TEST_CASE("fc backward matches finite differences") {
  for (Activation act : kActs) {
    CAPTURE(activation_name(act));
    Rng rng(100 + static_cast<int>(act));
    FcLayer<double> fc(random_tensor({3, 4}, rng), random_tensor({3}, rng), act);
    Tensor x = random_tensor({4, 5}, rng);
    const Tensor c = random_tensor({3, 5}, rng);
    auto loss = [&] { return weighted_sum(fc.forward(x), c); };
    loss();
    const auto g = fc.backward(c);
    CHECK(normwise_rel(g.input, numeric_grad(x, loss)) < 1e-6);
    CHECK(normwise_rel(g.weights, numeric_grad(fc.weights(), loss)) < 1e-6);
    CHECK(normwise_rel(g.bias, numeric_grad(fc.bias(), loss)) < 1e-6);
  }
}

TEST_CASE("fc columns are independent") {
  Rng rng(8);
  FcLayer<double> fc(random_tensor({3, 4}, rng), random_tensor({3}, rng), Activation::tanh);
  const Tensor x = random_tensor({4, 6}, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  CHECK(fc.forward(permute_columns(x, perm)) == permute_columns(fc.forward(x), perm));
}

TEST_CASE("fc errors and flops") {
  FcLayer<double> fc(Tensor({3, 4}), Tensor({3}), Activation::identity);
  CHECK_THROWS_AS(fc.backward(Tensor({3, 2})), StateError);
  CHECK_THROWS_AS(fc.forward(Tensor({5, 2})), DimensionError);
  CHECK_THROWS_AS(FcLayer<double>(Tensor({3, 4}), Tensor({4}), Activation::identity), DimensionError);
  CHECK(fc.forward_flops(1) == 2 * 3 * 4 + 2 * 3);
  CHECK(fc.backward_flops(1) == 4 * 3 * 4 + 2 * 3);
  for (std::uint64_t r : {2u, 7u, 128u}) {
    CHECK(fc.forward_flops(r) == r * fc.forward_flops(1));
    CHECK(fc.backward_flops(r) == r * fc.backward_flops(1));
  }
}

// ---------------------------------------------------------------------------
// convolution

TEST_CASE("conv2d_single examples") {
  Tensor a({3, 3});
  std::iota(a.data().begin(), a.data().end(), 1.0);
  CHECK(conv2d_single(ConvGeometry(3, 3, 2, 2, 1, 1), Tensor({2, 2}, 1.0), a) ==
        Tensor::matrix(2, 2, {12, 16, 24, 28}));

  // Only w11 set: the flip picks a22 = 4; a cross-correlation would give 1.
  const Tensor a2 = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(conv2d_single(ConvGeometry(2, 2, 2, 2, 1, 1), Tensor::matrix(2, 2, {1, 0, 0, 0}), a2) ==
        Tensor::matrix(1, 1, {4}));

  Rng rng(1);
  const Tensor any = random_tensor({4, 5}, rng);
  Tensor twice = any;
  for (auto& v : twice.data()) v *= 2.0;
  CHECK(conv2d_single(ConvGeometry(4, 5, 1, 1, 1, 1), Tensor::matrix(1, 1, {2}), any) == twice);
}

TEST_CASE("conv equals cross-correlation with the rotated kernel") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k1 = 1 + rng.below(4), k2 = 1 + rng.below(4);
    const std::size_t s1 = 1 + rng.below(3), s2 = 1 + rng.below(3);
    const std::size_t m = k1 + s1 * rng.below(4), n = k2 + s2 * rng.below(4);
    const ConvGeometry g(m, n, k1, k2, s1, s2);
    const Tensor w = random_tensor({k1, k2}, rng);
    const Tensor a = random_tensor({m, n}, rng);
    CHECK(normwise_rel(conv2d_single(g, w, a), oracle::xcorr(a, oracle::rotate180(w), s1, s2)) <
          1e-14);
  }
}

TEST_CASE("stride_rotate_select") {
  SUBCASE("strided selection of a 6x4 kernel") {
    CHECK(stride_rotate_select(symbolic_kernel(6, 4), 3, 2) ==
          Tensor::matrix(2, 2, {43, 41, 13, 11}));
  }
  SUBCASE("unit stride is a full rotation") {
    const Tensor w = symbolic_kernel(3, 5);
    CHECK(stride_rotate_select(w, 1, 1) == oracle::rotate180(w));
  }
  SUBCASE("1x1 kernel is unchanged") {
    CHECK(stride_rotate_select(Tensor::matrix(1, 1, {7}), 1, 1) == Tensor::matrix(1, 1, {7}));
  }
  SUBCASE("offsets shift the selection") {
    // rows 1, 4 and column 1 (0-based), rotated
    CHECK(stride_rotate_select(symbolic_kernel(6, 4), 3, 2, 1, 1) ==
          Tensor::matrix(2, 2, {54, 52, 24, 22}));
  }
}

TEST_CASE("conv layer special cases") {
  Rng rng(4);
  SUBCASE("one channel is conv2d_single plus bias") {
    const ConvGeometry g(5, 5, 3, 3, 2, 2);
    const Tensor w = random_tensor({1, 1, 3, 3}, rng);
    const Tensor b = random_tensor({1, 2, 2}, rng);
    ConvLayer<double> conv(g, w, b, Activation::identity);
    const Tensor a = random_tensor({1, 1, 5, 5}, rng);
    const Tensor out = conv.forward(a);
    const Tensor theta = conv2d_single(g, w.reshaped({3, 3}), a.reshaped({5, 5}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == theta[i] + b[i]);
  }
  SUBCASE("two identical channels double the single-channel result") {
    const ConvGeometry g(4, 4, 2, 2, 1, 1);
    const Tensor k = random_tensor({2, 2}, rng);
    const Tensor img = random_tensor({4, 4}, rng);
    Tensor w({1, 2, 2, 2}), a({1, 2, 4, 4});
    for (std::size_t c = 0; c < 2; ++c) {
      std::copy_n(k.data().begin(), 4, w.data().begin() + c * 4);
      std::copy_n(img.data().begin(), 16, a.data().begin() + c * 16);
    }
    ConvLayer<double> conv(g, w, Tensor({1, 3, 3}), Activation::identity);
    const Tensor out = conv.forward(a);
    const Tensor single = conv2d_single(g, k, img);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out[i] == 2.0 * single[i]);
  }
  SUBCASE("1x1 kernel backward scales the upstream gradient") {
    ConvLayer<double> conv(ConvGeometry(3, 4, 1, 1, 1, 1), Tensor({1, 1, 1, 1}, 1.5),
                           Tensor({1, 3, 4}), Activation::identity);
    conv.forward(random_tensor({2, 1, 3, 4}, rng));
    const Tensor go = random_tensor({2, 1, 3, 4}, rng);
    const auto grads = conv.backward(go);
    for (std::size_t i = 0; i < go.size(); ++i) CHECK(grads.input[i] == 1.5 * go[i]);
  }
  SUBCASE("constant upstream gradient on a ones input counts kernel overlaps") {
    ConvLayer<double> conv(ConvGeometry(3, 3, 2, 2, 1, 1), Tensor({1, 1, 2, 2}, 1.0),
                           Tensor({1, 2, 2}), Activation::identity);
    conv.forward(Tensor({1, 1, 3, 3}, 1.0));
    const auto grads = conv.backward(Tensor({1, 1, 2, 2}, 0.5));
    // every tap covers 4 input positions of value 1
    CHECK(grads.weights == Tensor({1, 1, 2, 2}, 2.0));
    CHECK(grads.bias == Tensor({1, 2, 2}, 0.5));
    // input gradient: number of output positions touching each input cell
    CHECK(grads.input == Tensor({1, 1, 3, 3}, std::vector<double>{0.5, 1, 0.5, 1, 2, 1, 0.5, 1, 0.5}));
  }
}

TEST_CASE("conv forward matches the direct sum bitwise") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k1 = 1 + rng.below(4), k2 = 1 + rng.below(4);
    const std::size_t s1 = 1 + rng.below(3), s2 = 1 + rng.below(3);
    const std::size_t m = k1 + s1 * rng.below(4), n = k2 + s2 * rng.below(4);
    const std::size_t r = 1 + rng.below(3), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    const bool tied = rng.below(2) == 1;
    const ConvGeometry g(m, n, k1, k2, s1, s2);
    const Tensor w = random_tensor({cout, cin, k1, k2}, rng);
    const Tensor b = tied ? random_tensor({cout, 1, 1}, rng)
                          : random_tensor({cout, g.out_rows(), g.out_cols()}, rng);
    const Tensor a = random_tensor({r, cin, m, n}, rng);
    ConvLayer<double> conv(g, w, b, Activation::identity, tied);
    CAPTURE(g.describe());
    CHECK(conv.forward(a) == oracle::conv_direct(a, w, b, s1, s2));
  }
}

TEST_CASE("conv input gradient matches the direct scatter") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k1 = 1 + rng.below(5), k2 = 1 + rng.below(5);
    const std::size_t s1 = 1 + rng.below(3), s2 = 1 + rng.below(3);
    const std::size_t m = k1 + s1 * rng.below(4), n = k2 + s2 * rng.below(4);
    const std::size_t r = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    const ConvGeometry g(m, n, k1, k2, s1, s2);
    const Tensor w = random_tensor({cout, cin, k1, k2}, rng);
    ConvLayer<double> conv(g, w, Tensor({cout, g.out_rows(), g.out_cols()}), Activation::identity);
    conv.forward(random_tensor({r, cin, m, n}, rng));
    const Tensor go = random_tensor({r, cout, g.out_rows(), g.out_cols()}, rng);
    CAPTURE(g.describe());
    CHECK(normwise_rel(conv.backward(go).input, oracle::conv_direct_input_grad(go, w, m, n, s1, s2)) <
          1e-14);
  }
}

TEST_CASE("naive index switch disagrees with the direct sum at stride 2") {
  // 1-D input gradient: dE/da_s = sum_g G_g w_{k1 - s + g'}, g' = (g-1) s1 + 1.
  auto direct = [](const std::vector<double>& w, const std::vector<double>& G, long s1, long s) {
    const long k1 = static_cast<long>(w.size());
    double acc = 0.0;
    for (long g = 1; g <= static_cast<long>(G.size()); ++g) {
      const long idx = k1 - s + (g - 1) * s1 + 1;
      if (idx >= 1 && idx <= k1) acc += G[g - 1] * w[idx - 1];
    }
    return acc;
  };
  // Reading the switch literally: i' = (i-1) s1 + 1 + (s-1) % s1, s' = floor((s - k1) / s1).
  auto literal = [](const std::vector<double>& w, const std::vector<double>& G, long s1, long s) {
    const long k1 = static_cast<long>(w.size());
    const long kp = (k1 - 1) / s1 + 1;
    const long sp = static_cast<long>(std::floor(static_cast<double>(s - k1) / s1));
    double acc = 0.0;
    for (long i = 1; i <= kp; ++i) {
      const long ip = (i - 1) * s1 + 1 + (s - 1) % s1;
      const long g = sp + i;
      if (g >= 1 && g <= static_cast<long>(G.size()) && ip <= k1) acc += G[g - 1] * w[ip - 1];
    }
    return acc;
  };
  const std::vector<double> w{1.0, 10.0, 100.0};
  auto max_gap = [&](long s1) {
    const long m = 3 + 2 * s1;  // m' = 3
    const std::vector<double> G{1.0, 2.0, 3.0};
    double gap = 0.0;
    for (long s = 1; s <= m; ++s) gap = std::max(gap, std::abs(direct(w, G, s1, s) - literal(w, G, s1, s)));
    return gap;
  };
  CHECK(max_gap(1) == 0.0);
  CHECK(max_gap(2) > 0.0);
}

TEST_CASE("conv backward matches finite differences at strides 1, 2, 3") {
  struct Case {
    ConvGeometry g;
    std::size_t cin, cout, r;
    bool tied;
    Activation act;
  };
  const Case cases[] = {
      {ConvGeometry(4, 5, 2, 3, 1, 1), 2, 3, 2, false, Activation::tanh},
      {ConvGeometry(5, 5, 3, 3, 2, 2), 1, 2, 3, false, Activation::identity},
      {ConvGeometry(7, 5, 3, 3, 2, 1), 3, 2, 2, true, Activation::sigmoid},
      {ConvGeometry(7, 7, 4, 4, 3, 3), 2, 2, 2, false, Activation::tanh},
      {ConvGeometry(8, 6, 2, 3, 3, 3), 2, 1, 1, true, Activation::identity},
  };
  int seed = 0;
  for (const Case& c : cases) {
    CAPTURE(c.g.describe());
    Rng rng(500 + seed++);
    const Tensor bias = c.tied ? random_tensor({c.cout, 1, 1}, rng)
                               : random_tensor({c.cout, c.g.out_rows(), c.g.out_cols()}, rng);
    ConvLayer<double> conv(c.g, random_tensor({c.cout, c.cin, c.g.k1, c.g.k2}, rng), bias, c.act,
                           c.tied);
    Tensor a = random_tensor({c.r, c.cin, c.g.m, c.g.n}, rng);
    const Tensor w_out = random_tensor({c.r, c.cout, c.g.out_rows(), c.g.out_cols()}, rng);
    auto loss = [&] { return weighted_sum(conv.forward(a), w_out); };
    loss();
    const auto g = conv.backward(w_out);
    CHECK(normwise_rel(g.input, numeric_grad(a, loss)) < 1e-6);
    CHECK(normwise_rel(g.weights, numeric_grad(conv.weights(), loss)) < 1e-6);
    CHECK(normwise_rel(g.bias, numeric_grad(conv.bias(), loss)) < 1e-6);
  }
}

TEST_CASE("conv samples are independent") {
  Rng rng(12);
  const ConvGeometry g(5, 5, 3, 3, 2, 2);
  ConvLayer<double> conv(g, random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 2}, rng),
                         Activation::relu);
  const Tensor a = random_tensor({4, 2, 5, 5}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  CHECK(conv.forward(permute_samples(a, perm)) == permute_samples(conv.forward(a), perm));
}

TEST_CASE("conv geometry and state errors") {
  CHECK_NOTHROW(ConvGeometry(5, 5, 3, 3, 2, 2).validate());
  CHECK_THROWS_AS(ConvGeometry(6, 5, 3, 3, 2, 2).validate(), DimensionError);
  CHECK_THROWS_AS(ConvGeometry(2, 5, 3, 3, 1, 1).validate(), DimensionError);
  CHECK_THROWS_AS(ConvGeometry(5, 5, 3, 3, 0, 1).validate(), DimensionError);
  const ConvGeometry g(5, 5, 3, 3, 2, 2);
  ConvLayer<double> conv(g, Tensor({2, 1, 3, 3}), Tensor({2, 2, 2}), Activation::identity);
  CHECK_THROWS_AS(conv.backward(Tensor({1, 2, 2, 2})), StateError);
  CHECK_THROWS_AS(conv.forward(Tensor({1, 2, 5, 5})), DimensionError);
  CHECK_THROWS_AS(ConvLayer<double>(g, Tensor({2, 1, 3, 3}), Tensor({2, 3, 3}), Activation::identity),
                  DimensionError);
}

TEST_CASE("conv flops") {
  const ConvGeometry g(7, 7, 3, 3, 2, 2);  // 3x3 output
  ConvLayer<double> conv(g, Tensor({4, 2, 3, 3}), Tensor({4, 3, 3}), Activation::relu);
  const std::uint64_t pairs = 4 * 2, mo = 3, no = 3;
  CHECK(conv.forward_flops(1) == pairs * (2 * 9 * mo * no + mo * no) + 4 * mo * no);
  // k' = 2 per axis at stride 2
  CHECK(conv.backward_flops(1) == pairs * (2 * 4 * 7 * 7 + 2 * 9 * mo * no));
  for (std::uint64_t r : {3u, 64u}) {
    CHECK(conv.forward_flops(r) == r * conv.forward_flops(1));
    CHECK(conv.backward_flops(r) == r * conv.backward_flops(1));
  }
}

TEST_CASE("serial and parallel conv layers agree bitwise") {
  Rng rng(77);
  const ConvGeometry g(9, 9, 3, 3, 2, 2);
  ConvLayer<double> conv(g, random_tensor({3, 2, 3, 3}, rng), random_tensor({3, 4, 4}, rng),
                         Activation::tanh);
  const Tensor a = random_tensor({6, 2, 9, 9}, rng);
  const Tensor go = random_tensor({6, 3, 4, 4}, rng);
  const Tensor y1 = conv.forward(a);
  const auto g1 = conv.backward(go);
  parallel::ThreadScope t(4);
  const Tensor y4 = conv.forward(a);
  const auto g4 = conv.backward(go);
  CHECK(y1 == y4);
  CHECK(g1.input == g4.input);
  CHECK(g1.weights == g4.weights);
  CHECK(g1.bias == g4.bias);
}

// ---------------------------------------------------------------------------
// batch normalization

TEST_CASE("bn forward examples") {
  SUBCASE("constant rows normalize to zero") {
    BnLayer<double> bn(2);
    bn.bias() = Tensor::vector({0.5, -1});
    const Tensor z = bn.forward(Tensor::matrix(2, 3, {4, 4, 4, -2, -2, -2}));
    CHECK(bn.normalized() == Tensor({2, 3}));
    CHECK(z == Tensor::matrix(2, 3, {0.5, 0.5, 0.5, -1, -1, -1}));
  }
  SUBCASE("two-sample row") {
    BnLayer<double> bn(1, 1e-14);
    bn.forward(Tensor::matrix(1, 2, {1, 3}));
    CHECK(bn.normalized()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(bn.normalized()[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bn statistics of the normalized batch") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.below(5), r = 2 + rng.below(10);
    BnLayer<double> bn(m, 1e-13);
    bn.forward(random_tensor({m, r}, rng, 3.0));
    const Tensor& xh = bn.normalized();
    for (std::size_t i = 0; i < m; ++i) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t j = 0; j < r; ++j) {
        mean += xh(i, j);
        sq += xh(i, j) * xh(i, j);
      }
      CHECK(std::abs(mean / r) < 1e-9);
      CHECK(std::abs(sq / r - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("bn backward examples") {
  SUBCASE("scale gradient") {
    BnLayer<double> bn(1, 1e-14);
    bn.forward(Tensor::matrix(1, 2, {1, 3}));
    const auto g = bn.backward(Tensor::matrix(1, 2, {2, 5}));
    CHECK(g.scale[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(g.bias[0] == 7.0);
  }
  SUBCASE("row-constant upstream gradient gives zero input gradient") {
    Rng rng(2);
    BnLayer<double> bn(3);
    bn.scale() = random_tensor({3}, rng);
    bn.forward(random_tensor({3, 5}, rng));
    const auto g = bn.backward(Tensor::matrix(3, 5, {1, 1, 1, 1, 1, -2, -2, -2, -2, -2, 4, 4, 4, 4, 4}));
    CHECK(oracle::max_abs(g.input) < 1e-12);
  }
}

TEST_CASE("bn backward matches finite differences") {
  for (Activation act : kActs) {
    CAPTURE(activation_name(act));
    Rng rng(800 + static_cast<int>(act));
    BnLayer<double> bn(4, 1e-5, act);
    bn.scale() = random_tensor({4}, rng);
    bn.bias() = random_tensor({4}, rng);
    Tensor x = random_tensor({4, 6}, rng, 2.0);
    const Tensor c = random_tensor({4, 6}, rng);
    auto loss = [&] { return weighted_sum(bn.forward(x), c); };
    loss();
    const auto g = bn.backward(c);
    CHECK(normwise_rel(g.input, numeric_grad(x, loss)) < 1e-6);
    CHECK(normwise_rel(g.scale, numeric_grad(bn.scale(), loss)) < 1e-6);
    CHECK(normwise_rel(g.bias, numeric_grad(bn.bias(), loss)) < 1e-6);
  }
}

TEST_CASE("bn couples the columns of a batch; inference does not") {
  Rng rng(14);
  BnLayer<double> bn(3);
  Tensor x = random_tensor({3, 4}, rng);
  const Tensor before = bn.forward(x);
  x(0, 3) += 1.0;
  const Tensor after = bn.forward(x);
  CHECK(before(0, 0) != after(0, 0));

  const Tensor inf = bn.infer(x);
  for (std::size_t j = 0; j < 4; ++j) {
    Tensor col({3, 1});
    for (std::size_t i = 0; i < 3; ++i) col(i, 0) = x(i, j);
    const Tensor y = bn.infer(col);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y(i, 0) == inf(i, j));
  }
}

TEST_CASE("bn running statistics follow the batches") {
  BnLayer<double> bn(1);
  bn.forward(Tensor::matrix(1, 2, {1, 3}));
  CHECK(bn.running_mean()[0] == doctest::Approx(0.1 * 2.0));
  CHECK(bn.running_var()[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("bn errors and flops") {
  BnLayer<double> bn(3);
  CHECK_THROWS_AS(bn.backward(Tensor({3, 2})), StateError);
  CHECK_THROWS_AS(bn.normalized(), StateError);
  CHECK_THROWS_AS(bn.forward(Tensor({4, 2})), DimensionError);
  for (std::uint64_t r : {1u, 5u, 256u}) {
    CHECK(bn.forward_flops(r) == r * bn.forward_flops(1));
    CHECK(bn.backward_flops(r) == r * bn.backward_flops(1));
  }
}

TEST_CASE("corrupt-backward hook perturbs fc weight gradients") {
  FcLayer<double> fc(Tensor::identity(2), Tensor({2}), Activation::identity);
  fc.forward(Tensor::matrix(2, 1, {1, 1}));
  const Tensor clean = fc.backward(Tensor::matrix(2, 1, {1, 1})).weights;
  testing::set_corrupt_backward(true);
  const Tensor bad = fc.backward(Tensor::matrix(2, 1, {1, 1})).weights;
  testing::set_corrupt_backward(false);
  CHECK(clean != bad);
}
