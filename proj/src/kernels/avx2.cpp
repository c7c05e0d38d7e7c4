// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include <immintrin.h>

#include <cmath>

#include "heal/kernels.hpp"

namespace heal::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_re(const double* ar, const double* ai, const double* br, const double* bi,
              std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(ar + i), _mm256_loadu_pd(br + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(ai + i), _mm256_loadu_pd(bi + i), acc1);
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(ar + i + 4), _mm256_loadu_pd(br + i + 4), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(ai + i + 4), _mm256_loadu_pd(bi + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(ar + i), _mm256_loadu_pd(br + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(ai + i), _mm256_loadu_pd(bi + i), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += ar[i] * br[i] + ai[i] * bi[i];
  return acc;
}

double sq_norm(const double* re, const double* im, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d r = _mm256_loadu_pd(re + i);
    __m256d m = _mm256_loadu_pd(im + i);
    acc0 = _mm256_fmadd_pd(r, r, acc0);
    acc1 = _mm256_fmadd_pd(m, m, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += re[i] * re[i] + im[i] * im[i];
  return acc;
}

void axpy_complex(double alpha, const double* xr, const double* xi, double* yr, double* yi,
                  std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(yr + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(xr + i), _mm256_loadu_pd(yr + i)));
    _mm256_storeu_pd(yi + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(xi + i), _mm256_loadu_pd(yi + i)));
  }
  for (; i < n; ++i) {
    yr[i] = std::fma(alpha, xr[i], yr[i]);
    yi[i] = std::fma(alpha, xi[i], yi[i]);
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// Four rows per pass so each query load feeds four FMAs.
void dot_re_rows(const double* qr, const double* qi, const double* rows_re, const double* rows_im,
                 std::size_t count, std::size_t n, double* out) {
  std::size_t r = 0;
  for (; r + 4 <= count; r += 4) {
    const double* r0 = rows_re + r * n;
    const double* i0 = rows_im + r * n;
    __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      __m256d q = _mm256_loadu_pd(qr + i);
      a0 = _mm256_fmadd_pd(q, _mm256_loadu_pd(r0 + i), a0);
      a1 = _mm256_fmadd_pd(q, _mm256_loadu_pd(r0 + n + i), a1);
      a2 = _mm256_fmadd_pd(q, _mm256_loadu_pd(r0 + 2 * n + i), a2);
      a3 = _mm256_fmadd_pd(q, _mm256_loadu_pd(r0 + 3 * n + i), a3);
      q = _mm256_loadu_pd(qi + i);
      a0 = _mm256_fmadd_pd(q, _mm256_loadu_pd(i0 + i), a0);
      a1 = _mm256_fmadd_pd(q, _mm256_loadu_pd(i0 + n + i), a1);
      a2 = _mm256_fmadd_pd(q, _mm256_loadu_pd(i0 + 2 * n + i), a2);
      a3 = _mm256_fmadd_pd(q, _mm256_loadu_pd(i0 + 3 * n + i), a3);
    }
    double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
    for (; i < n; ++i) {
      s0 += qr[i] * r0[i] + qi[i] * i0[i];
      s1 += qr[i] * r0[n + i] + qi[i] * i0[n + i];
      s2 += qr[i] * r0[2 * n + i] + qi[i] * i0[2 * n + i];
      s3 += qr[i] * r0[3 * n + i] + qi[i] * i0[3 * n + i];
    }
    out[r] = s0;
    out[r + 1] = s1;
    out[r + 2] = s2;
    out[r + 3] = s3;
  }
  for (; r < count; ++r) out[r] = dot_re(qr, qi, rows_re + r * n, rows_im + r * n, n);
}

// Fused multiply-add per term to match axpy() above.
void dot_columns(const double* x, const double* cols, std::size_t n, std::size_t count,
                 double* out) {
  for (std::size_t j = 0; j < count; ++j) {
    const double* c = cols + j * n;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc = std::fma(x[k], c[k], acc);
    out[j] = acc;
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2, dot_re, sq_norm, axpy_complex, axpy, dot_re_rows,
                                  dot_columns};
  return table;
}

}  // namespace heal::kernels
