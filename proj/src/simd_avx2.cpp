// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include "simd_impl.hpp"

namespace damda::simd::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

void whiten_sqnorm_avx2(const double* L, std::size_t d, double* resid, std::size_t n,
                        double* sqnorm) {
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t i = 0; i < n; ++i) sqnorm[i] = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double* col_j = resid + j * n;
    for (std::size_t k = 0; k < j; ++k) {
      const double l = L[k * d + j];
      if (l == 0.0) continue;
      const double* col_k = resid + k * n;
      const __m256d vl = _mm256_set1_pd(l);
      std::size_t i = 0;
      for (; i < n4; i += 4) {
        const __m256d c = _mm256_loadu_pd(col_j + i);
        _mm256_storeu_pd(col_j + i, _mm256_fnmadd_pd(vl, _mm256_loadu_pd(col_k + i), c));
      }
      for (; i < n; ++i) col_j[i] -= l * col_k[i];
    }
    const double inv = 1.0 / L[j * d + j];
    const __m256d vinv = _mm256_set1_pd(inv);
    std::size_t i = 0;
    for (; i < n4; i += 4) {
      const __m256d z = _mm256_mul_pd(_mm256_loadu_pd(col_j + i), vinv);
      _mm256_storeu_pd(col_j + i, z);
      _mm256_storeu_pd(sqnorm + i, _mm256_fmadd_pd(z, z, _mm256_loadu_pd(sqnorm + i)));
    }
    for (; i < n; ++i) {
      col_j[i] *= inv;
      sqnorm[i] += col_j[i] * col_j[i];
    }
  }
}

void weighted_crossprod_avx2(const double* x, std::size_t n, std::size_t d, const double* w,
                             double* out) {
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t a = 0; a < d; ++a) {
    const double* xa = x + a * n;
    for (std::size_t b = a; b < d; ++b) {
      const double* xb = x + b * n;
      __m256d acc = _mm256_setzero_pd();
      std::size_t i = 0;
      for (; i < n4; i += 4) {
        const __m256d wa = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(xa + i));
        acc = _mm256_fmadd_pd(wa, _mm256_loadu_pd(xb + i), acc);
      }
      double s = hsum(acc);
      for (; i < n; ++i) s += w[i] * xa[i] * xb[i];
      out[b * d + a] = s;
      out[a * d + b] = s;
    }
  }
}

void weighted_colsum_avx2(const double* x, std::size_t n, std::size_t d, const double* w,
                          double* out) {
  const std::size_t n4 = n & ~std::size_t{3};
  for (std::size_t j = 0; j < d; ++j) {
    const double* xj = x + j * n;
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i < n4; i += 4)
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(xj + i), acc);
    double s = hsum(acc);
    for (; i < n; ++i) s += w[i] * xj[i];
    out[j] = s;
  }
}

}  // namespace damda::simd::detail
