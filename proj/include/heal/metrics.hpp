#pragma once

// Evaluation, learning curves, pairwise comparison and entropy histograms.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "heal/dataset.hpp"
#include "heal/ensemble.hpp"

namespace heal {

// Ensemble-vote predictions for every row of an encoded pool.
std::vector<std::size_t> predict_pool(const Ensemble& ensemble, const EncodedPool& pool,
                                      const PriorSimilarityCache* cache, std::size_t workers = 0);
double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

// Vote entropy for every row of an encoded pool.
std::vector<double> pool_entropies(const Ensemble& ensemble, const EncodedPool& pool,
                                   const PriorSimilarityCache* cache, std::size_t workers = 0);

struct CurvePoint {
  std::uint64_t round = 0;
  std::size_t labeled_count = 0;
  double test_accuracy = 0.0;
  double acq_seconds = 0.0;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct LearningCurve {
  std::string dataset;
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;

  // Accuracy at an exact labeled count; throws when absent.
  double accuracy_at(std::size_t labeled_count) const;
  friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

inline constexpr const char* kCurveHeader = "strategy,seed,round,labeled_count,test_accuracy,acq_seconds";

std::string format_curve_csv(const LearningCurve& curve);
LearningCurve parse_curve_csv(std::string_view text, std::string dataset = "");
void write_curve_csv(const LearningCurve& curve, const std::filesystem::path& path);
LearningCurve read_curve_csv(const std::filesystem::path& path, std::string dataset = "");

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

struct ComparisonMatrix {
  std::vector<std::string> strategies;
  std::vector<double> penalty;  // S x S, row = loser, column = winner
  double at(std::size_t loser, std::size_t winner) const {
    return penalty[loser * strategies.size() + winner];
  }
};

inline constexpr const char* kPenaltyRule =
    "penalty[Y][X] = fraction of (dataset, labeled_count) checkpoints at which the seed-paired "
    "accuracy difference X - Y has mean > 2 standard errors";

// Curves are grouped by dataset; within a dataset every strategy must have
// the same seeds and the same labeled counts per seed.
ComparisonMatrix pairwise_matrix(std::span<const LearningCurve> curves);
std::string format_matrix_csv(const ComparisonMatrix& m);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
  double mean = 0.0;
  std::size_t total = 0;
};

// Equal-width bins over [lo, hi]; the top edge falls in the last bin and
// values outside the range are clamped into the end bins.
Histogram make_histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

struct EntropyHistogram {
  PriorMode mode = PriorMode::isolated;
  Histogram in_dist;
  Histogram ood;
  double gap() const { return ood.mean - in_dist.mean; }
};

// Entropies of the in-distribution test split and the OOD test split, binned
// over [0, ln C].
EntropyHistogram entropy_histogram(const Ensemble& ensemble, const Dataset& in_dist, const Dataset& ood,
                                   std::size_t bins, std::size_t workers = 0);

struct OodExperimentConfig {
  std::size_t members = 8;
  std::size_t dim = 2000;
  std::size_t bins = 20;
  double bandwidth = 0.4;
  TrainConfig train;  // prior_mode and seed are set per call
  SyntheticOodConfig data;
  std::size_t workers = 0;
};

struct OodExperimentResult {
  EntropyHistogram histogram;
  double in_dist_accuracy = 0.0;
};

// Trains on the in-distribution train split of a seeded synthetic pair with
// the given prior mode and histograms vote entropy.
OodExperimentResult run_ood_experiment(std::uint64_t seed, PriorMode mode,
                                       const OodExperimentConfig& config);

std::string format_histogram_table(const EntropyHistogram& h);

}  // namespace heal
