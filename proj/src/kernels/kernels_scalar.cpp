// Reference kernels. These define the semantics every SIMD variant is
// tested against.

#include <algorithm>
#include <cmath>

#include "nrf/kernels/kernels.hpp"

namespace nrf::kernels {
namespace {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t r = 0; r < m; ++r) std::fill(c + r * ldc, c + r * ldc + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * lda;
    const double* bp = b + p * ldb;
    for (std::size_t r = 0; r < m; ++r) {
      const double apr = ap[r];
      double* cr = c + r * ldc;
      for (std::size_t j = 0; j < n; ++j) cr[j] += apr * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * lda;
    for (std::size_t r = 0; r < n; ++r) {
      const double* br = b + r * ldb;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * br[p];
      c[i * ldc + r] += s;
    }
  }
}

void tanh_scaled(std::size_t n, double gamma, const double* z, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(gamma * z[i]);
}

void tanh_backward(std::size_t n, double gamma, const double* a, double* delta) {
  for (std::size_t i = 0; i < n; ++i) delta[i] *= gamma * (1.0 - a[i] * a[i]);
}

void adam_update(std::size_t n, const AdamStep& s, double* param, const double* grad, double* m, double* v) {
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  const double step_size = s.step_size();
  const double inv_sqrt_bc2 = s.inv_sqrt_bc2();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + one_minus_b1 * g;
    v[i] = s.beta2 * v[i] + one_minus_b2 * g * g;
    param[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + s.eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", gemm_nn, gemm_tn, gemm_nt, tanh_scaled, tanh_backward, adam_update};
  return table;
}

}  // namespace nrf::kernels
