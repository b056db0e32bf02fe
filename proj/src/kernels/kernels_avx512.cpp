// AVX-512F kernels. Same tiling scheme as the AVX2 variant with 8-lane
// vectors and larger register tiles.

#include <immintrin.h>

#include <cmath>

#include "nrf/kernels/kernels.hpp"

namespace nrf::kernels {
namespace {

// C[R x 8V] += A[R x k] * B[k x 8V]
template <int R, int V>
inline void nn_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                    std::size_t ldc) {
  __m512d acc[R][V];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) acc[r][v] = _mm512_loadu_pd(c + r * ldc + 8 * v);
  for (std::size_t p = 0; p < k; ++p) {
    __m512d bv[V];
    for (int v = 0; v < V; ++v) bv[v] = _mm512_loadu_pd(b + p * ldb + 8 * v);
    for (int r = 0; r < R; ++r) {
      const __m512d ar = _mm512_set1_pd(a[r * lda + p]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm512_fmadd_pd(ar, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) _mm512_storeu_pd(c + r * ldc + 8 * v, acc[r][v]);
}

template <int V>
void nn_panel(std::size_t m, std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb,
              double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) nn_tile<8, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  a += i * lda;
  c += i * ldc;
  switch (m - i) {
    case 7: nn_tile<7, V>(k, a, lda, b, ldb, c, ldc); break;
    case 6: nn_tile<6, V>(k, a, lda, b, ldb, c, ldc); break;
    case 5: nn_tile<5, V>(k, a, lda, b, ldb, c, ldc); break;
    case 4: nn_tile<4, V>(k, a, lda, b, ldb, c, ldc); break;
    case 3: nn_tile<3, V>(k, a, lda, b, ldb, c, ldc); break;
    case 2: nn_tile<2, V>(k, a, lda, b, ldb, c, ldc); break;
    case 1: nn_tile<1, V>(k, a, lda, b, ldb, c, ldc); break;
    default: break;
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  // 24-column panels of B are copied into a contiguous kKc x 24 buffer so the
  // tile streams them from L1; blocking over k bounds the buffer.
  constexpr std::size_t kKc = 256;
  constexpr std::size_t kW = 24;
  alignas(64) static thread_local double panel[kKc * kW];
  const std::size_t n24 = n - n % kW;
  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t kc = k - p0 < kKc ? k - p0 : kKc;
    const double* ap = a + p0;
    const double* bp = b + p0 * ldb;
    for (std::size_t j = 0; j < n24; j += kW) {
      for (std::size_t p = 0; p < kc; ++p)
        for (std::size_t v = 0; v < kW; v += 8) _mm512_store_pd(panel + p * kW + v, _mm512_loadu_pd(bp + p * ldb + j + v));
      nn_panel<3>(m, kc, ap, lda, panel, kW, c + j, ldc);
    }
    std::size_t j = n24;
    if (n - j >= 16) {
      nn_panel<2>(m, kc, ap, lda, bp + j, ldb, c + j, ldc);
      j += 16;
    }
    if (n - j >= 8) {
      nn_panel<1>(m, kc, ap, lda, bp + j, ldb, c + j, ldc);
      j += 8;
    }
    if (j < n) {
      const __mmask8 mask = static_cast<__mmask8>((1u << (n - j)) - 1u);
      for (std::size_t i = 0; i < m; ++i) {
        __m512d acc = _mm512_maskz_loadu_pd(mask, c + i * ldc + j);
        for (std::size_t p = 0; p < kc; ++p)
          acc = _mm512_fmadd_pd(_mm512_set1_pd(ap[i * lda + p]), _mm512_maskz_loadu_pd(mask, bp + p * ldb + j), acc);
        _mm512_mask_storeu_pd(c + i * ldc + j, mask, acc);
      }
    }
  }
}

// C[R x 16] = A[k x R]^T * B[k x 16]
template <int R>
inline void tn_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                    std::size_t ldc) {
  __m512d acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = _mm512_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m512d b0 = _mm512_loadu_pd(b + p * ldb);
    const __m512d b1 = _mm512_loadu_pd(b + p * ldb + 8);
    for (int r = 0; r < R; ++r) {
      const __m512d ar = _mm512_set1_pd(a[p * lda + r]);
      acc0[r] = _mm512_fmadd_pd(ar, b0, acc0[r]);
      acc1[r] = _mm512_fmadd_pd(ar, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    _mm512_storeu_pd(c + r * ldc, acc0[r]);
    _mm512_storeu_pd(c + r * ldc + 8, acc1[r]);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t n16 = n - n % 16;
  std::size_t r = 0;
  for (; r + 6 <= m; r += 6)
    for (std::size_t j = 0; j < n16; j += 16) tn_tile<6>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc);
  for (std::size_t j = 0; j < n16; j += 16) {
    switch (m - r) {
      case 5: tn_tile<5>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      case 4: tn_tile<4>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      case 3: tn_tile<3>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      case 2: tn_tile<2>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      case 1: tn_tile<1>(k, a + r, lda, b + j, ldb, c + r * ldc + j, ldc); break;
      default: break;
    }
  }
  for (std::size_t j = n16; j < n; j += 8) {
    const std::size_t w = n - j < 8 ? n - j : 8;
    const __mmask8 mask = static_cast<__mmask8>((1u << w) - 1u);
    for (std::size_t rr = 0; rr < m; ++rr) {
      __m512d acc = _mm512_setzero_pd();
      for (std::size_t p = 0; p < k; ++p)
        acc = _mm512_fmadd_pd(_mm512_set1_pd(a[p * lda + rr]), _mm512_maskz_loadu_pd(mask, b + p * ldb + j), acc);
      _mm512_mask_storeu_pd(c + rr * ldc + j, mask, acc);
    }
  }
}

// C[RI x RR] += A[RI x k] * B[RR x k]^T
template <int RI, int RR>
inline void nt_tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                    std::size_t ldc) {
  __m512d acc[RI][RR];
  for (int i = 0; i < RI; ++i)
    for (int r = 0; r < RR; ++r) acc[i][r] = _mm512_setzero_pd();
  const std::size_t k8 = k - k % 8;
  for (std::size_t p = 0; p < k8; p += 8) {
    __m512d bv[RR];
    for (int r = 0; r < RR; ++r) bv[r] = _mm512_loadu_pd(b + r * ldb + p);
    for (int i = 0; i < RI; ++i) {
      const __m512d av = _mm512_loadu_pd(a + i * lda + p);
      for (int r = 0; r < RR; ++r) acc[i][r] = _mm512_fmadd_pd(av, bv[r], acc[i][r]);
    }
  }
  if (k8 < k) {
    const __mmask8 mask = static_cast<__mmask8>((1u << (k - k8)) - 1u);
    __m512d bv[RR];
    for (int r = 0; r < RR; ++r) bv[r] = _mm512_maskz_loadu_pd(mask, b + r * ldb + k8);
    for (int i = 0; i < RI; ++i) {
      const __m512d av = _mm512_maskz_loadu_pd(mask, a + i * lda + k8);
      for (int r = 0; r < RR; ++r) acc[i][r] = _mm512_fmadd_pd(av, bv[r], acc[i][r]);
    }
  }
  for (int i = 0; i < RI; ++i)
    for (int r = 0; r < RR; ++r) c[i * ldc + r] += _mm512_reduce_add_pd(acc[i][r]);
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
  for (; r + 6 <= n; r += 6) nt_rows<6>(m, k, a, lda, b + r * ldb, ldb, c + r, ldc);
  b += r * ldb;
  c += r;
  switch (n - r) {
    case 5: nt_rows<5>(m, k, a, lda, b, ldb, c, ldc); break;
    case 4: nt_rows<4>(m, k, a, lda, b, ldb, c, ldc); break;
    case 3: nt_rows<3>(m, k, a, lda, b, ldb, c, ldc); break;
    case 2: nt_rows<2>(m, k, a, lda, b, ldb, c, ldc); break;
    case 1: nt_rows<1>(m, k, a, lda, b, ldb, c, ldc); break;
    default: break;
  }
}

// exp(x) for x in [0, 44], Cephes rational approximation.
inline __m512d exp_nonneg(__m512d x) {
  const __m512d n = _mm512_roundscale_pd(_mm512_add_pd(_mm512_mul_pd(x, _mm512_set1_pd(1.4426950408889634073599)),
                                                       _mm512_set1_pd(0.5)),
                                         _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC);
  __m512d r = _mm512_sub_pd(x, _mm512_mul_pd(n, _mm512_set1_pd(6.93145751953125E-1)));
  r = _mm512_sub_pd(r, _mm512_mul_pd(n, _mm512_set1_pd(1.42860682030941723212E-6)));
  const __m512d rr = _mm512_mul_pd(r, r);
  __m512d p = _mm512_set1_pd(1.26177193074810590878E-4);
  p = _mm512_add_pd(_mm512_mul_pd(p, rr), _mm512_set1_pd(3.02994407707441961300E-2));
  p = _mm512_add_pd(_mm512_mul_pd(p, rr), _mm512_set1_pd(9.99999999999999999910E-1));
  p = _mm512_mul_pd(p, r);
  __m512d q = _mm512_set1_pd(3.00198505138664455042E-6);
  q = _mm512_add_pd(_mm512_mul_pd(q, rr), _mm512_set1_pd(2.52448340349684104192E-3));
  q = _mm512_add_pd(_mm512_mul_pd(q, rr), _mm512_set1_pd(2.27265548208155028766E-1));
  q = _mm512_add_pd(_mm512_mul_pd(q, rr), _mm512_set1_pd(2.00000000000000000009E0));
  __m512d e = _mm512_div_pd(p, _mm512_sub_pd(q, p));
  e = _mm512_add_pd(_mm512_set1_pd(1.0), _mm512_add_pd(e, e));
  const __m512i ni = _mm512_cvtpd_epi64(n);
  return _mm512_castsi512_pd(_mm512_add_epi64(_mm512_castpd_si512(e), _mm512_slli_epi64(ni, 52)));
}

inline __m512d tanh_vec(__m512d y) {
  const __m512d ax = _mm512_min_pd(_mm512_abs_pd(y), _mm512_set1_pd(22.0));
  const __m512d z = _mm512_mul_pd(y, y);
  __m512d p = _mm512_set1_pd(-9.64399179425052238628E-1);
  p = _mm512_add_pd(_mm512_mul_pd(p, z), _mm512_set1_pd(-9.92877231001918586564E1));
  p = _mm512_add_pd(_mm512_mul_pd(p, z), _mm512_set1_pd(-1.61468768441708447952E3));
  __m512d q = _mm512_add_pd(z, _mm512_set1_pd(1.12811678491632931402E2));
  q = _mm512_add_pd(_mm512_mul_pd(q, z), _mm512_set1_pd(2.23548839060100448583E3));
  q = _mm512_add_pd(_mm512_mul_pd(q, z), _mm512_set1_pd(4.84406305325125486048E3));
  const __m512d small = _mm512_add_pd(y, _mm512_mul_pd(_mm512_mul_pd(y, z), _mm512_div_pd(p, q)));
  const __m512d s = exp_nonneg(_mm512_add_pd(ax, ax));
  __m512d large = _mm512_sub_pd(_mm512_set1_pd(1.0),
                                _mm512_div_pd(_mm512_set1_pd(2.0), _mm512_add_pd(s, _mm512_set1_pd(1.0))));
  const __m512i sign = _mm512_and_si512(_mm512_castpd_si512(y), _mm512_set1_epi64(static_cast<long long>(1ULL << 63)));
  large = _mm512_castsi512_pd(_mm512_or_si512(_mm512_castpd_si512(large), sign));
  const __mmask8 use_small = _mm512_cmp_pd_mask(ax, _mm512_set1_pd(0.625), _CMP_LT_OQ);
  return _mm512_mask_blend_pd(use_small, large, small);
}

void tanh_scaled(std::size_t n, double gamma, const double* z, double* out) {
  const __m512d g = _mm512_set1_pd(gamma);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm512_storeu_pd(out + i, tanh_vec(_mm512_mul_pd(g, _mm512_loadu_pd(z + i))));
  if (i < n) {
    const __mmask8 mask = static_cast<__mmask8>((1u << (n - i)) - 1u);
    _mm512_mask_storeu_pd(out + i, mask, tanh_vec(_mm512_mul_pd(g, _mm512_maskz_loadu_pd(mask, z + i))));
  }
}

void tanh_backward(std::size_t n, double gamma, const double* a, double* delta) {
  const __m512d g = _mm512_set1_pd(gamma);
  const __m512d one = _mm512_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m512d av = _mm512_loadu_pd(a + i);
    const __m512d d = _mm512_mul_pd(g, _mm512_sub_pd(one, _mm512_mul_pd(av, av)));
    _mm512_storeu_pd(delta + i, _mm512_mul_pd(_mm512_loadu_pd(delta + i), d));
  }
  for (; i < n; ++i) delta[i] *= gamma * (1.0 - a[i] * a[i]);
}

void adam_update(std::size_t n, const AdamStep& s, double* param, const double* grad, double* m, double* v) {
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  const double step_size = s.step_size();
  const double inv_sqrt_bc2 = s.inv_sqrt_bc2();
  const __m512d b1 = _mm512_set1_pd(s.beta1), b2 = _mm512_set1_pd(s.beta2);
  const __m512d c1 = _mm512_set1_pd(one_minus_b1), c2 = _mm512_set1_pd(one_minus_b2);
  const __m512d ss = _mm512_set1_pd(step_size), isb = _mm512_set1_pd(inv_sqrt_bc2);
  const __m512d eps = _mm512_set1_pd(s.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m512d g = _mm512_loadu_pd(grad + i);
    const __m512d mi = _mm512_add_pd(_mm512_mul_pd(b1, _mm512_loadu_pd(m + i)), _mm512_mul_pd(c1, g));
    const __m512d vi =
        _mm512_add_pd(_mm512_mul_pd(b2, _mm512_loadu_pd(v + i)), _mm512_mul_pd(_mm512_mul_pd(c2, g), g));
    _mm512_storeu_pd(m + i, mi);
    _mm512_storeu_pd(v + i, vi);
    const __m512d denom = _mm512_add_pd(_mm512_mul_pd(_mm512_sqrt_pd(vi), isb), eps);
    const __m512d step = _mm512_div_pd(_mm512_mul_pd(ss, mi), denom);
    _mm512_storeu_pd(param + i, _mm512_sub_pd(_mm512_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + one_minus_b1 * g;
    v[i] = s.beta2 * v[i] + one_minus_b2 * g * g;
    param[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + s.eps);
  }
}

}  // namespace

const KernelTable& avx512_table_impl() {
  static const KernelTable table{"avx512", gemm_nn, gemm_tn, gemm_nt, tanh_scaled, tanh_backward, adam_update};
  return table;
}

}  // namespace nrf::kernels
