// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached through the
// dispatcher after a CPUID check.

#include <immintrin.h>

#include <cmath>

#include "nrf/kernels/kernels.hpp"

namespace nrf::kernels {
namespace {

// C[R x 8] += A[R x k] * B[k x 8]
template <int R>
inline void nn_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                    std::size_t ldc) {
  __m256d acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) {
    acc0[r] = _mm256_loadu_pd(c + r * ldc);
    acc1[r] = _mm256_loadu_pd(c + r * ldc + 4);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d ar = _mm256_broadcast_sd(a + r * lda + p);
      acc0[r] = _mm256_fmadd_pd(ar, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_pd(ar, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc0[r]);
    _mm256_storeu_pd(c + r * ldc + 4, acc1[r]);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t n8 = n - n % 8;
  // Column panels outermost: a k x 8 panel of B stays cache-resident while
  // every row block of A streams past it.
  for (std::size_t j = 0; j < n8; j += 8) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) nn_tile<4>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    switch (m - i) {
      case 3: nn_tile<3>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc); break;
      case 2: nn_tile<2>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc); break;
      case 1: nn_tile<1>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc); break;
      default: break;
    }
  }
  if (n8 == n) return;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      for (std::size_t j = n8; j < n; ++j) c[i * ldc + j] += aip * b[p * ldb + j];
    }
}

// C[R x 8] = A[k x R]^T * B[k x 8]
template <int R>
inline void tn_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                    std::size_t ldc) {
  __m256d acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d ar = _mm256_broadcast_sd(a + p * lda + r);
      acc0[r] = _mm256_fmadd_pd(ar, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_pd(ar, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc0[r]);
    _mm256_storeu_pd(c + r * ldc + 4, acc1[r]);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t n8 = n - n % 8;
  std::size_t r = 0;
  for (; r + 4 <= m; r += 4)
    for (std::size_t j = 0; j < n8; j += 8) tn_tile<4>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc);
  for (std::size_t j = 0; j < n8; j += 8) {
    switch (m - r) {
      case 3: tn_tile<3>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      case 2: tn_tile<2>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      case 1: tn_tile<1>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      default: break;
    }
  }
  for (std::size_t rr = 0; rr < m; ++rr)
    for (std::size_t j = n8; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * lda + rr] * b[p * ldb + j];
      c[rr * ldc + j] = s;
    }
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// C[RI x RR] += A[RI x k] * B[RR x k]^T
template <int RI, int RR>
inline void nt_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                    std::size_t ldc) {
  __m256d acc[RI][RR];
  for (int i = 0; i < RI; ++i)
    for (int r = 0; r < RR; ++r) acc[i][r] = _mm256_setzero_pd();
  const std::size_t k4 = k - k % 4;
  for (std::size_t p = 0; p < k4; p += 4) {
    __m256d bv[RR];
    for (int r = 0; r < RR; ++r) bv[r] = _mm256_loadu_pd(b + r * ldb + p);
    for (int i = 0; i < RI; ++i) {
      const __m256d av = _mm256_loadu_pd(a + i * lda + p);
      for (int r = 0; r < RR; ++r) acc[i][r] = _mm256_fmadd_pd(av, bv[r], acc[i][r]);
    }
  }
  for (int i = 0; i < RI; ++i)
    for (int r = 0; r < RR; ++r) {
      double s = hsum(acc[i][r]);
      for (std::size_t p = k4; p < k; ++p) s += a[i * lda + p] * b[r * ldb + p];
      c[i * ldc + r] += s;
    }
}

template <int RR>
inline void nt_rows(std::size_t m, std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb,
                    double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) nt_tile<4, RR>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  switch (m - i) {
    case 3: nt_tile<3, RR>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc); break;
    case 2: nt_tile<2, RR>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc); break;
    case 1: nt_tile<1, RR>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc); break;
    default: break;
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t r = 0;
  for (; r + 2 <= n; r += 2) nt_rows<2>(m, k, a, lda, b + r * ldb, ldb, c + r, ldc);
  if (r < n) nt_rows<1>(m, k, a, lda, b + r * ldb, ldb, c + r, ldc);
}

// exp(x) for x in [0, 44], Cephes rational approximation.
inline __m256d exp_nonneg(__m256d x) {
  const __m256d n = _mm256_floor_pd(_mm256_add_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634073599)),
                                                  _mm256_set1_pd(0.5)));
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(6.93145751953125E-1)));
  r = _mm256_sub_pd(r, _mm256_mul_pd(n, _mm256_set1_pd(1.42860682030941723212E-6)));
  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d p = _mm256_set1_pd(1.26177193074810590878E-4);
  p = _mm256_add_pd(_mm256_mul_pd(p, rr), _mm256_set1_pd(3.02994407707441961300E-2));
  p = _mm256_add_pd(_mm256_mul_pd(p, rr), _mm256_set1_pd(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, r);
  __m256d q = _mm256_set1_pd(3.00198505138664455042E-6);
  q = _mm256_add_pd(_mm256_mul_pd(q, rr), _mm256_set1_pd(2.52448340349684104192E-3));
  q = _mm256_add_pd(_mm256_mul_pd(q, rr), _mm256_set1_pd(2.27265548208155028766E-1));
  q = _mm256_add_pd(_mm256_mul_pd(q, rr), _mm256_set1_pd(2.00000000000000000009E0));
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_add_pd(_mm256_set1_pd(1.0), _mm256_add_pd(e, e));
  const __m256i ni = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(n));
  return _mm256_castsi256_pd(_mm256_add_epi64(_mm256_castpd_si256(e), _mm256_slli_epi64(ni, 52)));
}

inline __m256d tanh_vec(__m256d y) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d sign = _mm256_and_pd(y, sign_mask);
  const __m256d ax = _mm256_min_pd(_mm256_andnot_pd(sign_mask, y), _mm256_set1_pd(22.0));
  // |y| < 0.625: odd rational approximation.
  const __m256d z = _mm256_mul_pd(y, y);
  __m256d p = _mm256_set1_pd(-9.64399179425052238628E-1);
  p = _mm256_add_pd(_mm256_mul_pd(p, z), _mm256_set1_pd(-9.92877231001918586564E1));
  p = _mm256_add_pd(_mm256_mul_pd(p, z), _mm256_set1_pd(-1.61468768441708447952E3));
  __m256d q = _mm256_add_pd(z, _mm256_set1_pd(1.12811678491632931402E2));
  q = _mm256_add_pd(_mm256_mul_pd(q, z), _mm256_set1_pd(2.23548839060100448583E3));
  q = _mm256_add_pd(_mm256_mul_pd(q, z), _mm256_set1_pd(4.84406305325125486048E3));
  const __m256d small = _mm256_add_pd(y, _mm256_mul_pd(_mm256_mul_pd(y, z), _mm256_div_pd(p, q)));
  // otherwise 1 - 2 / (exp(2|y|) + 1), with the sign restored.
  const __m256d s = exp_nonneg(_mm256_add_pd(ax, ax));
  __m256d large = _mm256_sub_pd(_mm256_set1_pd(1.0),
                                _mm256_div_pd(_mm256_set1_pd(2.0), _mm256_add_pd(s, _mm256_set1_pd(1.0))));
  large = _mm256_or_pd(large, sign);
  const __m256d use_small = _mm256_cmp_pd(ax, _mm256_set1_pd(0.625), _CMP_LT_OQ);
  return _mm256_blendv_pd(large, small, use_small);
}

void tanh_scaled(std::size_t n, double gamma, const double* z, double* out) {
  const __m256d g = _mm256_set1_pd(gamma);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, tanh_vec(_mm256_mul_pd(g, _mm256_loadu_pd(z + i))));
  if (i < n) {
    alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t t = i; t < n; ++t) buf[t - i] = z[t];
    _mm256_store_pd(buf, tanh_vec(_mm256_mul_pd(g, _mm256_load_pd(buf))));
    for (std::size_t t = i; t < n; ++t) out[t] = buf[t - i];
  }
}

void tanh_backward(std::size_t n, double gamma, const double* a, double* delta) {
  const __m256d g = _mm256_set1_pd(gamma);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d av = _mm256_loadu_pd(a + i);
    const __m256d d = _mm256_mul_pd(g, _mm256_sub_pd(one, _mm256_mul_pd(av, av)));
    _mm256_storeu_pd(delta + i, _mm256_mul_pd(_mm256_loadu_pd(delta + i), d));
  }
  for (; i < n; ++i) delta[i] *= gamma * (1.0 - a[i] * a[i]);
}

void adam_update(std::size_t n, const AdamStep& s, double* param, const double* grad, double* m, double* v) {
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  const double step_size = s.step_size();
  const double inv_sqrt_bc2 = s.inv_sqrt_bc2();
  const __m256d b1 = _mm256_set1_pd(s.beta1), b2 = _mm256_set1_pd(s.beta2);
  const __m256d c1 = _mm256_set1_pd(one_minus_b1), c2 = _mm256_set1_pd(one_minus_b2);
  const __m256d ss = _mm256_set1_pd(step_size), isb = _mm256_set1_pd(inv_sqrt_bc2);
  const __m256d eps = _mm256_set1_pd(s.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(c1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(_mm256_mul_pd(c2, g), g));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d denom = _mm256_add_pd(_mm256_mul_pd(_mm256_sqrt_pd(vi), isb), eps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(ss, mi), denom);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + one_minus_b1 * g;
    v[i] = s.beta2 * v[i] + one_minus_b2 * g * g;
    param[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + s.eps);
  }
}

}  // namespace

const KernelTable& avx2_table_impl() {
  static const KernelTable table{"avx2", gemm_nn, gemm_tn, gemm_nt, tanh_scaled, tanh_backward, adam_update};
  return table;
}

}  // namespace nrf::kernels
