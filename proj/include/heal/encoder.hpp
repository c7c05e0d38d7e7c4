#pragma once

// Fractional power encoder: x -> exp(i * Theta^T * x~), where x~ is the
// z-scored, bandwidth-scaled input and Theta is an n x D Gaussian phase
// matrix shared by every sub-model.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "heal/hypervector.hpp"
#include "heal/random.hpp"

namespace heal {

using FeatureVector = std::vector<double>;

inline constexpr double kStdFloor = 1e-8;

// Dense rows x cols matrix of raw or normalized features.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static FeatureMatrix from_rows(std::span<const FeatureVector> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols_, cols_);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(values_).subspan(r * cols_, cols_);
  }
  std::span<const double> data() const { return values_; }
  std::span<double> data() { return values_; }

  FeatureMatrix select(std::span<const std::size_t> rows) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
  double bandwidth = 1.0;

  std::size_t features() const { return mean.size(); }

  // mean 0, std 1: x~ = bandwidth * x.
  static NormalizationStats identity(std::size_t features, double bandwidth = 1.0);

  // out = bandwidth * (x - mean) / std. Throws on length mismatch or
  // non-finite input.
  void apply(std::span<const double> x, std::span<double> out) const;
  FeatureVector apply(std::span<const double> x) const;

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

NormalizationStats fit_normalizer(std::span<const FeatureVector> pool, double bandwidth = 1.0);
NormalizationStats fit_normalizer(const FeatureMatrix& pool, double bandwidth = 1.0);

class PhaseMatrix {
 public:
  PhaseMatrix() = default;
  PhaseMatrix(std::size_t features, std::size_t dim, std::vector<double> theta,
              std::uint64_t seed = 0);

  // Entries i.i.d. N(0, 1) from the phase_matrix stream of `seed`.
  static PhaseMatrix random(std::size_t features, std::size_t dim, std::uint64_t seed);

  std::size_t features() const { return features_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const double> row(std::size_t k) const {
    return std::span<const double>(theta_).subspan(k * dim_, dim_);
  }
  double at(std::size_t k, std::size_t d) const { return theta_[k * dim_ + d]; }
  std::span<const double> data() const { return theta_; }

  // Resamples the listed columns in place (sorted, deduplicated order).
  void regenerate_columns(std::span<const std::size_t> dims, Rng& rng);

  friend bool operator==(const PhaseMatrix&, const PhaseMatrix&) = default;

 private:
  std::size_t features_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> theta_;
};

// Copy of `theta` with the listed columns replaced by fresh N(0, 1) draws.
PhaseMatrix regenerate_dimensions(const PhaseMatrix& theta, std::span<const std::size_t> dims,
                                  Rng& rng);

// Encodes a raw feature vector.
Hypervector encode(std::span<const double> x, const PhaseMatrix& theta,
                   const NormalizationStats& stats);

// Encodes an already-normalized vector into `out`. `phase_scratch` must hold D.
void encode_normalized(std::span<const double> normalized, const PhaseMatrix& theta, ComplexSpan out,
                       std::span<double> phase_scratch);

// Normalized inputs plus their encodings, computed once and reused by training,
// scoring and evaluation. Re-encoding is only needed for regenerated columns.
class EncodedPool {
 public:
  EncodedPool() = default;
  EncodedPool(const FeatureMatrix& raw, const PhaseMatrix& theta, const NormalizationStats& stats,
              std::size_t workers = 0);

  std::size_t size() const { return encodings_.rows(); }
  std::size_t dim() const { return encodings_.dim(); }
  ComplexView encoding(std::size_t i) const { return encodings_.row(i); }
  const HypervectorMatrix& encodings() const { return encodings_; }
  const FeatureMatrix& normalized() const { return normalized_; }

  // Recomputes the listed columns of every encoding from the current theta.
  void reencode_dims(const PhaseMatrix& theta, std::span<const std::size_t> dims,
                     std::size_t workers = 0);

 private:
  FeatureMatrix normalized_;
  HypervectorMatrix encodings_;
};

}  // namespace heal
