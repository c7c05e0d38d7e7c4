#pragma once

// Inner-loop kernels over structure-of-arrays complex vectors.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant living in its own translation unit. The active table is picked once
// at startup from CPUID; HEAL_ISA=scalar in the environment pins the scalar
// path (useful when comparing outputs across machines).

#include <cstddef>
#include <string_view>

namespace heal::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  // sum_i ar[i]*br[i] + ai[i]*bi[i]  ==  real(a . conj(b))
  double (*dot_re)(const double* ar, const double* ai, const double* br, const double* bi,
                   std::size_t n);
  // sum_i re[i]^2 + im[i]^2
  double (*sq_norm)(const double* re, const double* im, std::size_t n);
  // y += alpha * x, on both components
  void (*axpy_complex)(double alpha, const double* xr, const double* xi, double* yr, double* yi,
                       std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[r] = dot_re(query, rows[r]) for `count` rows laid out with stride `n`
  void (*dot_re_rows)(const double* qr, const double* qi, const double* rows_re,
                      const double* rows_im, std::size_t count, std::size_t n, double* out);
  // out[j] = sum_k cols[j*n + k] * x[k], accumulated in k order with the same
  // multiply-add rounding as axpy, so recomputing selected phase columns
  // reproduces a full row-wise accumulation bit for bit.
  void (*dot_columns)(const double* x, const double* cols, std::size_t n, std::size_t count,
                      double* out);
};

const KernelTable& scalar_table();
#if defined(HEAL_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

bool isa_supported(Isa isa);
std::string_view isa_name(Isa isa);

// Table in use for this process.
const KernelTable& active();

// Overrides the active table; throws if the ISA is not supported on this CPU.
void select(Isa isa);

}  // namespace heal::kernels
