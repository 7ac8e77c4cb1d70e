#pragma once

#include <cstddef>

namespace damda::simd::detail {

void whiten_sqnorm_scalar(const double* L, std::size_t d, double* resid, std::size_t n,
                          double* sqnorm);
void weighted_crossprod_scalar(const double* x, std::size_t n, std::size_t d, const double* w,
                               double* out);
void weighted_colsum_scalar(const double* x, std::size_t n, std::size_t d, const double* w,
                            double* out);

#if defined(DAMDA_HAVE_AVX2_TU)
void whiten_sqnorm_avx2(const double* L, std::size_t d, double* resid, std::size_t n,
                        double* sqnorm);
void weighted_crossprod_avx2(const double* x, std::size_t n, std::size_t d, const double* w,
                             double* out);
void weighted_colsum_avx2(const double* x, std::size_t n, std::size_t d, const double* w,
                          double* out);
#endif

}  // namespace damda::simd::detail
