#include "heal/hypervector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "heal/kernels.hpp"

namespace heal {
namespace {

void require_same_dim(ComplexView a, ComplexView b) {
  if (a.re.size() != b.re.size() || a.im.size() != a.re.size() || b.im.size() != b.re.size())
    throw std::invalid_argument("hypervector dimension mismatch");
}

}  // namespace

Hypervector::Hypervector(std::vector<double> re, std::vector<double> im)
    : re_(std::move(re)), im_(std::move(im)) {
  if (re_.size() != im_.size())
    throw std::invalid_argument("real and imaginary parts differ in length");
}

Hypervector::Hypervector(ComplexView v)
    : re_(v.re.begin(), v.re.end()), im_(v.im.begin(), v.im.end()) {}

void Hypervector::set_zero() {
  std::fill(re_.begin(), re_.end(), 0.0);
  std::fill(im_.begin(), im_.end(), 0.0);
}

double dot_re(ComplexView a, ComplexView b) {
  require_same_dim(a, b);
  return kernels::active().dot_re(a.re.data(), a.im.data(), b.re.data(), b.im.data(), a.dim());
}

double sq_norm(ComplexView v) {
  return kernels::active().sq_norm(v.re.data(), v.im.data(), v.dim());
}

double norm(ComplexView v) { return std::sqrt(sq_norm(v)); }

double similarity_with_norms(ComplexView a, ComplexView b, double norm_a, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  const double s = dot_re(a, b) / (norm_a * norm_b);
  return std::clamp(s, -1.0, 1.0);
}

double similarity(ComplexView a, ComplexView b) {
  require_same_dim(a, b);
  return similarity_with_norms(a, b, norm(a), norm(b));
}

Hypervector bundle(std::span<const Hypervector> vs, std::size_t dim) {
  Hypervector out(dim);
  for (const auto& v : vs) bundle_into(out.span(), v.view());
  return out;
}

void bundle_into(ComplexSpan acc, ComplexView v, double weight) {
  require_same_dim(acc, v);
  kernels::active().axpy_complex(weight, v.re.data(), v.im.data(), acc.re.data(), acc.im.data(),
                                 v.dim());
}

Hypervector bind(ComplexView a, ComplexView b) {
  require_same_dim(a, b);
  Hypervector out(a.dim());
  auto re = out.re();
  auto im = out.im();
  for (std::size_t d = 0; d < a.dim(); ++d) {
    re[d] = a.re[d] * b.re[d] - a.im[d] * b.im[d];
    im[d] = a.re[d] * b.im[d] + a.im[d] * b.re[d];
  }
  return out;
}

Hypervector conjugate(ComplexView v) {
  Hypervector out(v);
  for (auto& x : out.im()) x = -x;
  return out;
}

Hypervector negate(ComplexView v) {
  Hypervector out(v);
  for (auto& x : out.re()) x = -x;
  for (auto& x : out.im()) x = -x;
  return out;
}

}  // namespace heal
