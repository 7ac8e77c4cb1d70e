#include "simd_impl.hpp"

namespace damda::simd::detail {

void whiten_sqnorm_scalar(const double* L, std::size_t d, double* resid, std::size_t n,
                          double* sqnorm) {
  for (std::size_t i = 0; i < n; ++i) sqnorm[i] = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double* col_j = resid + j * n;
    for (std::size_t k = 0; k < j; ++k) {
      const double l = L[k * d + j];
      if (l == 0.0) continue;
      const double* col_k = resid + k * n;
      for (std::size_t i = 0; i < n; ++i) col_j[i] -= l * col_k[i];
    }
    const double inv = 1.0 / L[j * d + j];
    for (std::size_t i = 0; i < n; ++i) {
      col_j[i] *= inv;
      sqnorm[i] += col_j[i] * col_j[i];
    }
  }
}

void weighted_crossprod_scalar(const double* x, std::size_t n, std::size_t d, const double* w,
                               double* out) {
  for (std::size_t a = 0; a < d; ++a) {
    const double* xa = x + a * n;
    for (std::size_t b = a; b < d; ++b) {
      const double* xb = x + b * n;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += w[i] * xa[i] * xb[i];
      out[b * d + a] = s;
      out[a * d + b] = s;
    }
  }
}

void weighted_colsum_scalar(const double* x, std::size_t n, std::size_t d, const double* w,
                            double* out) {
  for (std::size_t j = 0; j < d; ++j) {
    const double* xj = x + j * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * xj[i];
    out[j] = s;
  }
}

}  // namespace damda::simd::detail
