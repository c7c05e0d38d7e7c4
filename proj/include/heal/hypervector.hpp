#pragma once

// Complex hypervectors stored as parallel real/imaginary arrays, and the
// similarity and composition operations on them.

#include <cstddef>
#include <span>
#include <vector>

namespace heal {

struct ComplexView {
  std::span<const double> re;
  std::span<const double> im;
  std::size_t dim() const { return re.size(); }
};

struct ComplexSpan {
  std::span<double> re;
  std::span<double> im;
  std::size_t dim() const { return re.size(); }
  operator ComplexView() const { return {re, im}; }
};

// A single hypervector. Encoder outputs are unit-modulus phasors; class,
// prior and memory accumulators have unconstrained modulus.
class Hypervector {
 public:
  Hypervector() = default;
  explicit Hypervector(std::size_t dim) : re_(dim, 0.0), im_(dim, 0.0) {}
  Hypervector(std::vector<double> re, std::vector<double> im);
  explicit Hypervector(ComplexView v);

  std::size_t dim() const { return re_.size(); }
  std::span<const double> re() const { return re_; }
  std::span<const double> im() const { return im_; }
  std::span<double> re() { return re_; }
  std::span<double> im() { return im_; }

  ComplexView view() const { return {re_, im_}; }
  ComplexSpan span() { return {re_, im_}; }
  operator ComplexView() const { return view(); }

  void set_zero();

  friend bool operator==(const Hypervector&, const Hypervector&) = default;

 private:
  std::vector<double> re_;
  std::vector<double> im_;
};

// rows x dim, row-major per component.
class HypervectorMatrix {
 public:
  HypervectorMatrix() = default;
  HypervectorMatrix(std::size_t rows, std::size_t dim)
      : rows_(rows), dim_(dim), re_(rows * dim, 0.0), im_(rows * dim, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  ComplexView row(std::size_t r) const {
    return {std::span<const double>(re_).subspan(r * dim_, dim_),
            std::span<const double>(im_).subspan(r * dim_, dim_)};
  }
  ComplexSpan row(std::size_t r) {
    return {std::span<double>(re_).subspan(r * dim_, dim_),
            std::span<double>(im_).subspan(r * dim_, dim_)};
  }

  std::span<const double> re_data() const { return re_; }
  std::span<const double> im_data() const { return im_; }
  std::span<double> re_data() { return re_; }
  std::span<double> im_data() { return im_; }

  friend bool operator==(const HypervectorMatrix&, const HypervectorMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> re_;
  std::vector<double> im_;
};

// real(a . conj(b))
double dot_re(ComplexView a, ComplexView b);
double sq_norm(ComplexView v);
double norm(ComplexView v);

// real(a . conj(b)) / (|a| |b|), clamped to [-1, 1]. Returns 0 when either
// side has zero norm, so an empty accumulator is dissimilar to everything.
double similarity(ComplexView a, ComplexView b);

// Same value as similarity() when both norms are already known.
double similarity_with_norms(ComplexView a, ComplexView b, double norm_a, double norm_b);

// Elementwise sum; an empty collection yields the zero vector of `dim`.
Hypervector bundle(std::span<const Hypervector> vs, std::size_t dim);

// acc <- acc + weight * v
void bundle_into(ComplexSpan acc, ComplexView v, double weight = 1.0);

// Elementwise complex product.
Hypervector bind(ComplexView a, ComplexView b);

Hypervector conjugate(ComplexView v);
Hypervector negate(ComplexView v);

}  // namespace heal
