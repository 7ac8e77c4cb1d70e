#pragma once
// Data-parallel inner loops of the mixture code.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant compiled in its own translation unit. The variant used by the rest
// of the library is chosen once at first use from the CPU feature flags; the
// environment variable DAMDA_SIMD=scalar forces the reference path.
//
// Matrices are column-major (Eigen's default), so for an n x d block the
// n entries of one column are contiguous and the kernels vectorise across
// observations.

#include <cstddef>
#include <span>
#include <string_view>

namespace damda::simd {

struct KernelTable {
  const char* name;

  // resid is an n x d column-major block of centred observations. On return
  // it holds L^{-1} resid' (column j is the j-th coordinate of the whitened
  // residual) and sqnorm[i] = || L^{-1} r_i ||^2. L is d x d lower
  // triangular, column-major, with a strictly positive diagonal.
  void (*whiten_sqnorm)(const double* L, std::size_t d, double* resid, std::size_t n,
                        double* sqnorm);

  // out (d x d, column-major, full) = sum_i w[i] x_i x_i'.
  void (*weighted_crossprod)(const double* x, std::size_t n, std::size_t d, const double* w,
                             double* out);

  // out[j] = sum_i w[i] x(i, j).
  void (*weighted_colsum)(const double* x, std::size_t n, std::size_t d, const double* w,
                          double* out);
};

const KernelTable& scalar_kernels();

// nullptr when the AVX2 translation unit was not built or the CPU lacks
// AVX2/FMA.
const KernelTable* avx2_kernels();

// The table used by the library.
const KernelTable& active();

// Span wrappers over active().
void whiten_sqnorm(std::span<const double> L, std::size_t d, std::span<double> resid,
                   std::span<double> sqnorm);
void weighted_crossprod(std::span<const double> x, std::size_t d, std::span<const double> w,
                        std::span<double> out);
void weighted_colsum(std::span<const double> x, std::size_t d, std::span<const double> w,
                     std::span<double> out);

}  // namespace damda::simd
