#include "heal/kernels.hpp"

namespace heal::kernels {
namespace {

double dot_re(const double* ar, const double* ai, const double* br, const double* bi,
              std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += ar[i] * br[i] + ai[i] * bi[i];
  return acc;
}

double sq_norm(const double* re, const double* im, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += re[i] * re[i] + im[i] * im[i];
  return acc;
}

void axpy_complex(double alpha, const double* xr, const double* xi, double* yr, double* yi,
                  std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    yr[i] += alpha * xr[i];
    yi[i] += alpha * xi[i];
  }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void dot_re_rows(const double* qr, const double* qi, const double* rows_re, const double* rows_im,
                 std::size_t count, std::size_t n, double* out) {
  for (std::size_t r = 0; r < count; ++r)
    out[r] = dot_re(qr, qi, rows_re + r * n, rows_im + r * n, n);
}

void dot_columns(const double* x, const double* cols, std::size_t n, std::size_t count,
                 double* out) {
  for (std::size_t j = 0; j < count; ++j) {
    const double* c = cols + j * n;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += x[k] * c[k];
    out[j] = acc;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, dot_re, sq_norm, axpy_complex, axpy, dot_re_rows,
                                  dot_columns};
  return table;
}

}  // namespace heal::kernels
