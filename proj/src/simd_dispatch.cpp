#include <cstdlib>
#include <cstring>

#include <spdlog/spdlog.h>

#include "damda/errors.hpp"
#include "damda/simd.hpp"
#include "simd_impl.hpp"

namespace damda::simd {
namespace {

const KernelTable kScalar{"scalar", &detail::whiten_sqnorm_scalar,
                          &detail::weighted_crossprod_scalar, &detail::weighted_colsum_scalar};

#if defined(DAMDA_HAVE_AVX2_TU)
const KernelTable kAvx2{"avx2", &detail::whiten_sqnorm_avx2, &detail::weighted_crossprod_avx2,
                        &detail::weighted_colsum_avx2};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

const KernelTable& select() {
  const char* forced = std::getenv("DAMDA_SIMD");
  if (forced && std::strcmp(forced, "scalar") == 0) return kScalar;
  if (const KernelTable* t = avx2_kernels()) return *t;
  return kScalar;
}

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable* avx2_kernels() {
#if defined(DAMDA_HAVE_AVX2_TU)
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    const KernelTable& t = select();
    spdlog::debug("simd kernels: {}", t.name);
    return t;
  }();
  return table;
}

void whiten_sqnorm(std::span<const double> L, std::size_t d, std::span<double> resid,
                   std::span<double> sqnorm) {
  const std::size_t n = sqnorm.size();
  if (L.size() != d * d || resid.size() != n * d)
    throw DimensionMismatch("whiten_sqnorm: inconsistent buffer sizes");
  active().whiten_sqnorm(L.data(), d, resid.data(), n, sqnorm.data());
}

void weighted_crossprod(std::span<const double> x, std::size_t d, std::span<const double> w,
                        std::span<double> out) {
  const std::size_t n = w.size();
  if (x.size() != n * d || out.size() != d * d)
    throw DimensionMismatch("weighted_crossprod: inconsistent buffer sizes");
  active().weighted_crossprod(x.data(), n, d, w.data(), out.data());
}

void weighted_colsum(std::span<const double> x, std::size_t d, std::span<const double> w,
                     std::span<double> out) {
  const std::size_t n = w.size();
  if (x.size() != n * d || out.size() != d)
    throw DimensionMismatch("weighted_colsum: inconsistent buffer sizes");
  active().weighted_colsum(x.data(), n, d, w.data(), out.data());
}

}  // namespace damda::simd
