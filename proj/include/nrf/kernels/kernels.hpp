#pragma once

#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

namespace nrf::kernels {

/// Bias-corrected Adam coefficients for one step.
struct AdamStep {
  double learning_rate;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  ///< 1 - beta1^t
  double bias_correction2;  ///< 1 - beta2^t

  // p -= step_size * m / (sqrt(v) * inv_sqrt_bc2 + eps): one sqrt and one
  // division per element. Every variant must use these two scalars.
  double step_size() const { return learning_rate / bias_correction1; }
  double inv_sqrt_bc2() const { return 1.0 / std::sqrt(bias_correction2); }
};

/// Inner loops of the dense-layer engine. All matrices are row-major with an
/// explicit leading dimension so that kernels can run on sub-blocks.
///
/// Every variant must agree with the scalar table: the GEMM-style kernels up
/// to reassociation rounding, adam_update bit for bit.
struct KernelTable {
  const char* name;

  /// C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc);

  /// C[m x n] = A[k x m]^T * B[k x n]   (overwrites C)
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc);

  /// C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc);

  /// out[i] = tanh(gamma * z[i])
  void (*tanh_scaled)(std::size_t n, double gamma, const double* z, double* out);

  /// delta[i] *= gamma * (1 - a[i]^2)
  void (*tanh_backward)(std::size_t n, double gamma, const double* a, double* delta);

  /// One Adam step over n parameters.
  void (*adam_update)(std::size_t n, const AdamStep& step, double* param, const double* grad, double* m, double* v);
};

const KernelTable& scalar_table();
/// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_table();
const KernelTable* avx512_table();

/// Tables usable on this machine, scalar first.
std::vector<const KernelTable*> available_tables();

/// The table used by the network engine. Chosen on first use: the widest
/// supported variant, unless NRF_KERNELS=scalar|avx2|avx512 says otherwise.
const KernelTable& active();

/// Overrides the active table by name; returns false if it is unavailable.
bool select(std::string_view name);

}  // namespace nrf::kernels
