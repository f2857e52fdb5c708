#include <benchmark/benchmark.h>

#include <vector>

#include "adabatch/conv_geometry.hpp"
#include "adabatch/kernels.hpp"
#include "adabatch/parallel.hpp"
#include "adabatch/rng.hpp"

namespace ab = adabatch;
namespace k = adabatch::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  ab::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

k::Exec exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? k::Exec::serial : k::Exec::parallel;
}

void set_threads(const benchmark::State& state) {
  ab::parallel::set_num_threads(state.range(0) == 0 ? 1 : ab::parallel::threads_from_env());
}

// range(0): 0 serial, 1 parallel; range(1): size
void BM_matmul(benchmark::State& state) {
  set_threads(state);
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    k::matmul<double>(a, b, c, n, n, n, exec_of(state));
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

struct ConvCase {
  ab::ConvGeometry g;
  std::size_t r, cin, cout;
};

ConvCase conv_case(std::size_t r) { return {ab::ConvGeometry(31, 31, 3, 3, 2, 2), r, 8, 16}; }

void BM_conv_forward(benchmark::State& state) {
  set_threads(state);
  const auto cc = conv_case(static_cast<std::size_t>(state.range(1)));
  const auto x = random_vec(cc.r * cc.cin * cc.g.m * cc.g.n, 3);
  const auto w = random_vec(cc.cout * cc.cin * cc.g.k1 * cc.g.k2, 4);
  const auto bias = random_vec(cc.cout, 5);
  std::vector<double> y(cc.r * cc.cout * cc.g.out_rows() * cc.g.out_cols());
  for (auto _ : state) {
    k::conv_forward<double>(x, w, bias, y, cc.g, cc.r, cc.cin, cc.cout, true, exec_of(state));
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_conv_backward_input(benchmark::State& state) {
  set_threads(state);
  const auto cc = conv_case(static_cast<std::size_t>(state.range(1)));
  const auto go = random_vec(cc.r * cc.cout * cc.g.out_rows() * cc.g.out_cols(), 6);
  const auto w = random_vec(cc.cout * cc.cin * cc.g.k1 * cc.g.k2, 7);
  std::vector<double> gi(cc.r * cc.cin * cc.g.m * cc.g.n);
  for (auto _ : state) {
    k::conv_backward_input<double>(go, w, gi, cc.g, cc.r, cc.cin, cc.cout, exec_of(state));
    benchmark::DoNotOptimize(gi.data());
  }
}

void BM_conv_backward_weights(benchmark::State& state) {
  set_threads(state);
  const auto cc = conv_case(static_cast<std::size_t>(state.range(1)));
  const auto go = random_vec(cc.r * cc.cout * cc.g.out_rows() * cc.g.out_cols(), 8);
  const auto x = random_vec(cc.r * cc.cin * cc.g.m * cc.g.n, 9);
  std::vector<double> gw(cc.cout * cc.cin * cc.g.k1 * cc.g.k2);
  for (auto _ : state) {
    k::conv_backward_weights<double>(go, x, gw, cc.g, cc.r, cc.cin, cc.cout, exec_of(state));
    benchmark::DoNotOptimize(gw.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul)->ArgsProduct({{0, 1}, {64, 256}});
BENCHMARK(BM_conv_forward)->ArgsProduct({{0, 1}, {16, 128}});
BENCHMARK(BM_conv_backward_input)->ArgsProduct({{0, 1}, {16, 128}});
BENCHMARK(BM_conv_backward_weights)->ArgsProduct({{0, 1}, {16, 128}});

BENCHMARK_MAIN();
