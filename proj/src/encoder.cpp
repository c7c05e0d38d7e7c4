#include "heal/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "heal/error.hpp"
#include "heal/kernels.hpp"
#include "heal/parallel.hpp"

namespace heal {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) throw std::invalid_argument("feature matrix size mismatch");
}

FeatureMatrix FeatureMatrix::from_rows(std::span<const FeatureVector> rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  FeatureMatrix out(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw Error("inconsistent feature count");
    std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
  }
  return out;
}

FeatureMatrix FeatureMatrix::select(std::span<const std::size_t> rows) const {
  FeatureMatrix out(rows.size(), cols_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

NormalizationStats NormalizationStats::identity(std::size_t features, double bandwidth) {
  return {std::vector<double>(features, 0.0), std::vector<double>(features, 1.0), bandwidth};
}

void NormalizationStats::apply(std::span<const double> x, std::span<double> out) const {
  if (x.size() != mean.size() || out.size() != mean.size())
    throw Error("inconsistent feature count");
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!std::isfinite(x[k])) throw Error("non-finite feature");
    out[k] = bandwidth * (x[k] - mean[k]) / std[k];
  }
}

FeatureVector NormalizationStats::apply(std::span<const double> x) const {
  FeatureVector out(x.size());
  apply(x, out);
  return out;
}

namespace {

NormalizationStats finish_stats(std::vector<double> sum, std::vector<double> sum_sq,
                                std::size_t count, double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw ConfigError("bandwidth must be a positive finite number");
  NormalizationStats stats;
  stats.bandwidth = bandwidth;
  stats.mean.resize(sum.size());
  stats.std.resize(sum.size());
  const double n = static_cast<double>(count);
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double mean = sum[k] / n;
    const double var = std::max(0.0, sum_sq[k] / n);
    stats.mean[k] = mean;
    stats.std[k] = std::max(std::sqrt(var), kStdFloor);
  }
  return stats;
}

}  // namespace

// Two passes (mean, then centered second moment) for stability on large offsets.
NormalizationStats fit_normalizer(const FeatureMatrix& pool, double bandwidth) {
  if (pool.rows() == 0) throw Error("empty dataset");
  const std::size_t n = pool.cols();
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  for (std::size_t r = 0; r < pool.rows(); ++r) {
    auto row = pool.row(r);
    for (std::size_t k = 0; k < n; ++k) {
      if (!std::isfinite(row[k])) throw Error("non-finite feature");
      sum[k] += row[k];
    }
  }
  const double count = static_cast<double>(pool.rows());
  for (std::size_t r = 0; r < pool.rows(); ++r) {
    auto row = pool.row(r);
    for (std::size_t k = 0; k < n; ++k) {
      const double dev = row[k] - sum[k] / count;
      sum_sq[k] += dev * dev;
    }
  }
  return finish_stats(std::move(sum), std::move(sum_sq), pool.rows(), bandwidth);
}

NormalizationStats fit_normalizer(std::span<const FeatureVector> pool, double bandwidth) {
  if (pool.empty()) throw Error("empty dataset");
  return fit_normalizer(FeatureMatrix::from_rows(pool), bandwidth);
}

PhaseMatrix::PhaseMatrix(std::size_t features, std::size_t dim, std::vector<double> theta,
                         std::uint64_t seed)
    : features_(features), dim_(dim), seed_(seed), theta_(std::move(theta)) {
  if (theta_.size() != features_ * dim_) throw std::invalid_argument("phase matrix size mismatch");
}

PhaseMatrix PhaseMatrix::random(std::size_t features, std::size_t dim, std::uint64_t seed) {
  if (features == 0 || dim == 0) throw ConfigError("phase matrix needs positive shape");
  Rng rng = derive_stream(seed, Stream::phase_matrix);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> theta(features * dim);
  for (auto& v : theta) v = normal(rng);
  return PhaseMatrix(features, dim, std::move(theta), seed);
}

namespace {

std::vector<std::size_t> sorted_unique(std::span<const std::size_t> dims, std::size_t dim) {
  std::vector<std::size_t> out(dims.begin(), dims.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (!out.empty() && out.back() >= dim) throw Error("dimension index out of range");
  return out;
}

}  // namespace

void PhaseMatrix::regenerate_columns(std::span<const std::size_t> dims, Rng& rng) {
  const auto cols = sorted_unique(dims, dim_);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t d : cols)
    for (std::size_t k = 0; k < features_; ++k) theta_[k * dim_ + d] = normal(rng);
}

PhaseMatrix regenerate_dimensions(const PhaseMatrix& theta, std::span<const std::size_t> dims,
                                  Rng& rng) {
  PhaseMatrix out = theta;
  out.regenerate_columns(dims, rng);
  return out;
}

void encode_normalized(std::span<const double> normalized, const PhaseMatrix& theta, ComplexSpan out,
                       std::span<double> phase_scratch) {
  if (normalized.size() != theta.features()) throw Error("inconsistent feature count");
  const std::size_t dim = theta.dim();
  auto phase = phase_scratch.first(dim);
  std::fill(phase.begin(), phase.end(), 0.0);
  const auto& k = kernels::active();
  for (std::size_t f = 0; f < normalized.size(); ++f) {
    if (normalized[f] == 0.0) continue;
    k.axpy(normalized[f], theta.row(f).data(), phase.data(), dim);
  }
  for (std::size_t d = 0; d < dim; ++d) {
    out.re[d] = std::cos(phase[d]);
    out.im[d] = std::sin(phase[d]);
  }
}

Hypervector encode(std::span<const double> x, const PhaseMatrix& theta,
                   const NormalizationStats& stats) {
  if (x.size() != theta.features() || stats.features() != theta.features())
    throw Error("inconsistent feature count");
  const FeatureVector normalized = stats.apply(x);
  Hypervector out(theta.dim());
  std::vector<double> phase(theta.dim());
  encode_normalized(normalized, theta, out.span(), phase);
  return out;
}

EncodedPool::EncodedPool(const FeatureMatrix& raw, const PhaseMatrix& theta,
                         const NormalizationStats& stats, std::size_t workers)
    : normalized_(raw.rows(), raw.cols()), encodings_(raw.rows(), theta.dim()) {
  if (raw.cols() != theta.features() || stats.features() != theta.features())
    throw Error("inconsistent feature count");
  for (std::size_t r = 0; r < raw.rows(); ++r) stats.apply(raw.row(r), normalized_.row(r));
  const std::size_t chunks = std::min<std::size_t>(resolve_workers(workers), raw.rows());
  const std::size_t per = chunks == 0 ? 0 : (raw.rows() + chunks - 1) / chunks;
  parallel_for(chunks, workers, [&](std::size_t c) {
    std::vector<double> phase(theta.dim());
    const std::size_t end = std::min(raw.rows(), (c + 1) * per);
    for (std::size_t r = c * per; r < end; ++r)
      encode_normalized(normalized_.row(r), theta, encodings_.row(r), phase);
  });
}

void EncodedPool::reencode_dims(const PhaseMatrix& theta, std::span<const std::size_t> dims,
                                std::size_t workers) {
  const auto cols = sorted_unique(dims, encodings_.dim());
  if (cols.empty()) return;
  // Gather the affected columns once so the per-sample loop is contiguous.
  const std::size_t nf = theta.features();
  std::vector<double> columns(cols.size() * nf);
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t k = 0; k < nf; ++k) columns[j * nf + k] = theta.at(k, cols[j]);
  const auto& kern = kernels::active();
  parallel_for(size(), workers, [&](std::size_t r) {
    std::vector<double> phase(cols.size());
    kern.dot_columns(normalized_.row(r).data(), columns.data(), nf, cols.size(), phase.data());
    auto out = encodings_.row(r);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out.re[cols[j]] = std::cos(phase[j]);
      out.im[cols[j]] = std::sin(phase[j]);
    }
  });
}

}  // namespace heal
