#pragma once

// Data-parallel compute kernels. Each kernel has a serial reference and an
// OpenMP variant. The parallel variants split only independent output
// elements and keep every element's summation order, so both produce
// bitwise-identical results; that property is tested.

#include <cstddef>
#include <span>

#include "adabatch/conv_geometry.hpp"

namespace adabatch::kernels {

enum class Exec { serial, parallel };

// Exec::parallel when parallel::num_threads() > 1.
Exec current_exec() noexcept;

// c (m x n) = a (m x k) * b (k x n), k ascending.
template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n, Exec exec);

// Multi-channel true convolution plus bias.
//   input   [r][cin][m][n]
//   weights [cout][cin][k1][k2]
//   bias    [cout][bm][bn], (bm, bn) = output dims or (1, 1) when tied
//   out     [r][cout][m'][n']
// Per output element: acc = sum over cin (ascending) of the single-channel
// sum over (i, j) ascending, then acc + bias.
template <class T>
void conv_forward(std::span<const T> input, std::span<const T> weights, std::span<const T> bias,
                  std::span<T> out, const ConvGeometry& g, std::size_t r, std::size_t cin,
                  std::size_t cout, bool tied_bias, Exec exec);

// Input gradient. grad_out is dE/dC ([r][cout][m'][n']); writes grad_in
// ([r][cin][m][n]). Uses the strided index switch over rotated sub-kernels.
template <class T>
void conv_backward_input(std::span<const T> grad_out, std::span<const T> weights,
                         std::span<T> grad_in, const ConvGeometry& g, std::size_t r,
                         std::size_t cin, std::size_t cout, Exec exec);

// Weight gradient summed over the batch, written to grad_w ([cout][cin][k1][k2]).
template <class T>
void conv_backward_weights(std::span<const T> grad_out, std::span<const T> input,
                           std::span<T> grad_w, const ConvGeometry& g, std::size_t r,
                           std::size_t cin, std::size_t cout, Exec exec);

}  // namespace adabatch::kernels
