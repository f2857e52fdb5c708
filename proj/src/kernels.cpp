#include "adabatch/kernels.hpp"

#include <vector>

#include "adabatch/layers.hpp"
#include "adabatch/parallel.hpp"

namespace adabatch::kernels {

namespace {

using std::ptrdiff_t;
using std::size_t;

// floor(a / b) for b > 0 and any sign of a.
ptrdiff_t floor_div(ptrdiff_t a, ptrdiff_t b) {
  ptrdiff_t q = a / b;
  if ((a % b != 0) && (a < 0)) --q;
  return q;
}

ptrdiff_t ceil_div(ptrdiff_t a, ptrdiff_t b) { return -floor_div(-a, b); }

ptrdiff_t pos_mod(ptrdiff_t a, ptrdiff_t b) {
  ptrdiff_t r = a % b;
  return r < 0 ? r + b : r;
}

// Number of kernel taps offset, offset + s, ... that lie below k.
size_t tap_count(size_t k, size_t s, size_t offset) {
  return offset < k ? (k - 1 - offset) / s + 1 : 0;
}

}  // namespace

Exec current_exec() noexcept {
  return parallel::num_threads() > 1 ? Exec::parallel : Exec::serial;
}

template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, size_t m, size_t k,
            size_t n, Exec exec) {
  const bool par = exec == Exec::parallel;
  const int threads = parallel::num_threads();
  // i-k-j order: c_ij accumulates a_ik b_kj for k ascending starting from 0,
  // the same sequence as the textbook dot-product loop.
#pragma omp parallel for schedule(static) num_threads(threads) if (par)
  for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(m); ++i) {
    T* ci = c.data() + i * n;
    for (size_t j = 0; j < n; ++j) ci[j] = T{0};
    const T* ai = a.data() + i * k;
    for (size_t kk = 0; kk < k; ++kk) {
      const T aik = ai[kk];
      const T* bk = b.data() + kk * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

template <class T>
void conv_forward(std::span<const T> input, std::span<const T> weights, std::span<const T> bias,
                  std::span<T> out, const ConvGeometry& g, size_t r, size_t cin, size_t cout,
                  bool tied_bias, Exec exec) {
  const size_t mo = g.out_rows(), no = g.out_cols();
  const size_t in_plane = g.m * g.n, k_plane = g.k1 * g.k2, out_plane = mo * no;
  const bool par = exec == Exec::parallel;
  const int threads = parallel::num_threads();
  const ptrdiff_t units = static_cast<ptrdiff_t>(r * cout);

#pragma omp parallel for schedule(static) num_threads(threads) if (par)
  for (ptrdiff_t u = 0; u < units; ++u) {
    const size_t b = static_cast<size_t>(u) / cout, o = static_cast<size_t>(u) % cout;
    T* dst = out.data() + (b * cout + o) * out_plane;
    for (size_t gi = 0; gi < mo; ++gi) {
      for (size_t hi = 0; hi < no; ++hi) {
        // 0-based form of the convolution sum: input row k1-1 + g*s1 - i.
        const size_t base_r = g.k1 - 1 + gi * g.s1, base_c = g.k2 - 1 + hi * g.s2;
        T acc{0};
        for (size_t c = 0; c < cin; ++c) {
          const T* a = input.data() + (b * cin + c) * in_plane;
          const T* w = weights.data() + (o * cin + c) * k_plane;
          T theta{0};
          for (size_t i = 0; i < g.k1; ++i)
            for (size_t j = 0; j < g.k2; ++j)
              theta += w[i * g.k2 + j] * a[(base_r - i) * g.n + (base_c - j)];
          acc += theta;
        }
        const T bv = tied_bias ? bias[o] : bias[o * out_plane + gi * no + hi];
        dst[gi * no + hi] = acc + bv;
      }
    }
  }
}

template <class T>
void conv_backward_input(std::span<const T> grad_out, std::span<const T> weights,
                         std::span<T> grad_in, const ConvGeometry& g, size_t r, size_t cin,
                         size_t cout, Exec exec) {
  const size_t mo = g.out_rows(), no = g.out_cols();
  const size_t s1 = g.s1, s2 = g.s2;
  const size_t out_plane = mo * no, in_plane = g.m * g.n;

  // Rotated strided sub-kernels, one per (o, c, row offset, col offset).
  // Stored unrotated-indexable: sub[u][v] pairs with grad_out(g0 + u, h0 + v).
  std::vector<BasicTensor<T>> subs(cout * cin * s1 * s2);
  for (size_t o = 0; o < cout; ++o) {
    for (size_t c = 0; c < cin; ++c) {
      BasicTensor<T> w({g.k1, g.k2});
      std::copy_n(weights.data() + (o * cin + c) * g.k1 * g.k2, g.k1 * g.k2, w.data().data());
      for (size_t p1 = 0; p1 < s1; ++p1)
        for (size_t p2 = 0; p2 < s2; ++p2)
          subs[((o * cin + c) * s1 + p1) * s2 + p2] = stride_rotate_select(w, s1, s2, p1, p2);
    }
  }

  const bool par = exec == Exec::parallel;
  const int threads = parallel::num_threads();
  const ptrdiff_t units = static_cast<ptrdiff_t>(r * cin);
  const auto k1 = static_cast<ptrdiff_t>(g.k1), k2 = static_cast<ptrdiff_t>(g.k2);
  const auto ps1 = static_cast<ptrdiff_t>(s1), ps2 = static_cast<ptrdiff_t>(s2);

#pragma omp parallel for schedule(static) num_threads(threads) if (par)
  for (ptrdiff_t unit = 0; unit < units; ++unit) {
    const size_t b = static_cast<size_t>(unit) / cin, c = static_cast<size_t>(unit) % cin;
    T* dst = grad_in.data() + (b * cin + c) * in_plane;
    for (ptrdiff_t s = 0; s < static_cast<ptrdiff_t>(g.m); ++s) {
      // Index switch: outputs g0, g0+1, ... meet kernel taps off1, off1+s1, ...
      const ptrdiff_t g0 = ceil_div(s - k1 + 1, ps1);
      const auto off1 = static_cast<size_t>(pos_mod(k1 - 1 - s, ps1));
      const size_t n1 = tap_count(g.k1, s1, off1);
      for (ptrdiff_t t = 0; t < static_cast<ptrdiff_t>(g.n); ++t) {
        const ptrdiff_t h0 = ceil_div(t - k2 + 1, ps2);
        const auto off2 = static_cast<size_t>(pos_mod(k2 - 1 - t, ps2));
        const size_t n2 = tap_count(g.k2, s2, off2);
        T acc{0};
        for (size_t o = 0; o < cout; ++o) {
          const T* go = grad_out.data() + (b * cout + o) * out_plane;
          const BasicTensor<T>& rot = subs[((o * cin + c) * s1 + off1) * s2 + off2];
          for (size_t u = 0; u < n1; ++u) {
            const ptrdiff_t gg = g0 + static_cast<ptrdiff_t>(u);
            if (gg < 0 || gg >= static_cast<ptrdiff_t>(mo)) continue;
            for (size_t v = 0; v < n2; ++v) {
              const ptrdiff_t hh = h0 + static_cast<ptrdiff_t>(v);
              if (hh < 0 || hh >= static_cast<ptrdiff_t>(no)) continue;
              acc += go[gg * no + hh] * rot(n1 - 1 - u, n2 - 1 - v);
            }
          }
        }
        dst[s * g.n + t] = acc;
      }
    }
  }
}

template <class T>
void conv_backward_weights(std::span<const T> grad_out, std::span<const T> input,
                           std::span<T> grad_w, const ConvGeometry& g, size_t r, size_t cin,
                           size_t cout, Exec exec) {
  const size_t mo = g.out_rows(), no = g.out_cols();
  const size_t out_plane = mo * no, in_plane = g.m * g.n, k_plane = g.k1 * g.k2;
  const bool par = exec == Exec::parallel;
  const int threads = parallel::num_threads();
  const ptrdiff_t units = static_cast<ptrdiff_t>(cout * cin);

#pragma omp parallel for schedule(static) num_threads(threads) if (par)
  for (ptrdiff_t unit = 0; unit < units; ++unit) {
    const size_t o = static_cast<size_t>(unit) / cin, c = static_cast<size_t>(unit) % cin;
    T* dw = grad_w.data() + (o * cin + c) * k_plane;
    for (size_t i = 0; i < g.k1; ++i) {
      for (size_t j = 0; j < g.k2; ++j) {
        T acc{0};
        for (size_t b = 0; b < r; ++b) {
          const T* go = grad_out.data() + (b * cout + o) * out_plane;
          const T* a = input.data() + (b * cin + c) * in_plane;
          for (size_t gi = 0; gi < mo; ++gi)
            for (size_t hi = 0; hi < no; ++hi)
              acc += go[gi * no + hi] *
                     a[(g.k1 - 1 - i + gi * g.s1) * g.n + (g.k2 - 1 - j + hi * g.s2)];
        }
        dw[i * g.k2 + j] = acc;
      }
    }
  }
}

#define ADABATCH_INSTANTIATE(T)                                                                \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, size_t, size_t, \
                          size_t, Exec);                                                       \
  template void conv_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>,     \
                                std::span<T>, const ConvGeometry&, size_t, size_t, size_t,     \
                                bool, Exec);                                                   \
  template void conv_backward_input<T>(std::span<const T>, std::span<const T>, std::span<T>,   \
                                       const ConvGeometry&, size_t, size_t, size_t, Exec);     \
  template void conv_backward_weights<T>(std::span<const T>, std::span<const T>, std::span<T>, \
                                         const ConvGeometry&, size_t, size_t, size_t, Exec);

ADABATCH_INSTANTIATE(float)
ADABATCH_INSTANTIATE(double)
#undef ADABATCH_INSTANTIATE

}  // namespace adabatch::kernels
