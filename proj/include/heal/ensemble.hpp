#pragma once

// HDC ensemble with static prior hypervectors.
//
// Each sub-model holds C trainable class hypervectors and C random prior
// hypervectors. A query's score for class l in one sub-model is
//   isolated: S = sim(h, m_l) + sim(h, p_l)
//   combined: S = sim(h, m_l + p_l)
//   none:     S = sim(h, m_l)
// Sub-models vote; the vote histogram gives a predictive distribution and
// entropy, and the member-averaged scores give the top-two margin used for
// acquisition.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "heal/encoder.hpp"
#include "heal/hypervector.hpp"

namespace heal {

enum class PriorMode { isolated, combined, none };

std::string_view to_string(PriorMode mode);
PriorMode parse_prior_mode(std::string_view text);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t max_epochs = 100;
  double target_train_accuracy = 0.99;
  bool bootstrap = true;
  PriorMode prior_mode = PriorMode::isolated;
  std::uint64_t seed = 0;
  // Dimension regeneration during fit; fraction 0 disables it.
  double regen_fraction = 0.0;
  std::size_t regen_interval = 5;
  std::size_t workers = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EnsembleShape {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::size_t members = 8;
  std::size_t features = 0;
  friend bool operator==(const EnsembleShape&, const EnsembleShape&) = default;
};

struct SubModel {
  HypervectorMatrix model;  // C x D, trainable
  HypervectorMatrix prior;  // C x D, static
  std::vector<double> model_norms;
  std::vector<double> prior_norms;
  std::vector<double> combined_norms;  // |m_l + p_l|

  std::size_t classes() const { return model.rows(); }
  void reset_model();
  void refresh_norms(std::size_t cls);
  void refresh_all_norms();
  friend bool operator==(const SubModel&, const SubModel&) = default;
};

struct Ensemble {
  EnsembleShape shape;
  TrainConfig config;
  PhaseMatrix theta;
  NormalizationStats stats;
  std::vector<SubModel> members;
  // Regeneration events applied so far; drives the regeneration RNG stream.
  std::uint64_t regen_events = 0;

  std::size_t classes() const { return shape.classes; }
  std::size_t dim() const { return shape.dim; }
  std::size_t size() const { return members.size(); }

  friend bool operator==(const Ensemble&, const Ensemble&) = default;
};

// Zero models, N(0,1) priors (real and imaginary parts), Gaussian theta, all
// drawn from streams of config.seed. `stats` must match `shape.features`.
Ensemble init_ensemble(const EnsembleShape& shape, const TrainConfig& config,
                       NormalizationStats stats);

// Per (sample, member, class) similarity between the sample's encoding and
// the member's prior hypervector, plus the sample's encoding norm.
struct PriorSimilarityCache {
  std::size_t samples = 0;
  std::size_t members = 0;
  std::size_t classes = 0;
  std::vector<double> table;
  std::vector<double> query_norms;

  bool empty() const { return samples == 0; }
  std::span<const double> row(std::size_t sample) const {
    return std::span<const double>(table).subspan(sample * members * classes, members * classes);
  }
  double at(std::size_t sample, std::size_t member, std::size_t cls) const {
    return table[(sample * members + member) * classes + cls];
  }
};

PriorSimilarityCache build_prior_cache(const EncodedPool& pool, const Ensemble& ensemble,
                                       std::size_t workers = 0);

// A query plus whatever has been precomputed for it. An empty `prior_sims`
// means prior similarities are computed on the fly.
struct Query {
  ComplexView h;
  double norm = 0.0;
  std::span<const double> prior_sims;  // members x classes, or empty
};

Query make_query(ComplexView h);
Query make_query(const EncodedPool& pool, const PriorSimilarityCache* cache, std::size_t index);

// Score of one class in one member under `mode`.
double combined_score(const Query& q, const Ensemble& ensemble, std::size_t member, std::size_t cls,
                      PriorMode mode);
inline double combined_score(const Query& q, const Ensemble& ensemble, std::size_t member,
                             std::size_t cls) {
  return combined_score(q, ensemble, member, cls, ensemble.config.prior_mode);
}

// All class scores of one member.
void member_scores(const Query& q, const Ensemble& ensemble, std::size_t member, PriorMode mode,
                   std::span<double> out);

// members x classes score table for a query.
std::vector<double> score_table(const Query& q, const Ensemble& ensemble);

// Index of the largest value, lowest index on ties.
std::size_t argmax(std::span<const double> values);

struct SubModelPrediction {
  std::size_t label = 0;
  std::vector<double> scores;
};

SubModelPrediction predict_submodel(const Query& q, const Ensemble& ensemble, std::size_t member);

struct VoteDistribution {
  std::vector<double> probs;        // C
  std::vector<std::size_t> votes;   // E
};

// Mode of the votes (lowest class on ties) and the vote histogram.
struct EnsemblePrediction {
  std::size_t label = 0;
  VoteDistribution distribution;
};

EnsemblePrediction vote(std::span<const std::size_t> votes, std::size_t classes);
EnsemblePrediction predict_ensemble(const Query& q, const Ensemble& ensemble);

// -sum p ln p over nonzero entries.
double predictive_entropy(const VoteDistribution& v);

// Member-mean of class scores.
std::vector<double> average_scores(const Query& q, const Ensemble& ensemble);

// second-best minus best of `averaged`; <= 0, zero on a top-two tie.
double margin_from_scores(std::span<const double> averaged);
double margin_score(const Query& q, const Ensemble& ensemble);

// Training data as indices into an encoded pool.
struct TrainingSet {
  const EncodedPool* pool = nullptr;
  const PriorSimilarityCache* cache = nullptr;
  std::span<const std::size_t> indices;
  std::span<const std::size_t> labels;  // parallel to indices
};

// Encoded data whose encodings and cache must follow a regeneration event.
struct PoolBinding {
  EncodedPool* pool = nullptr;
  PriorSimilarityCache* cache = nullptr;
};

struct MemberReport {
  std::size_t epochs = 0;
  double train_accuracy = 0.0;
  std::size_t updates = 0;
};

struct TrainingReport {
  std::vector<MemberReport> members;
  std::size_t regen_events = 0;
};

// Re-zeroes every model and trains each member on its bootstrap resample
// (or the full set) until its epoch accuracy reaches the target or
// max_epochs. `round` selects the RNG streams, so repeated fits with the same
// round and data are bit-identical. With config.regen_fraction > 0, members
// are synchronized every regen_interval epochs and low-variance dimensions
// are regenerated; `bindings` must then include the training pool.
TrainingReport fit(Ensemble& ensemble, const TrainingSet& data, std::uint64_t round,
                   std::span<const PoolBinding> bindings = {});

// Per-dimension class variance (real + imaginary), member-averaged and
// normalized to sum 1. All zeros when every model is zero.
std::vector<double> dimension_variance(const Ensemble& ensemble);

// The floor(fraction * D) lowest-variance dimensions, ascending.
std::vector<std::size_t> select_regen_dims(std::span<const double> variance, double fraction);

// One regeneration event: resamples theta columns and prior entries at the
// selected dimensions, zeroes model entries there, re-encodes every bound
// pool at those dimensions and rebuilds their caches. Returns the dims.
std::vector<std::size_t> neuralhd_regenerate(Ensemble& ensemble, double fraction,
                                             std::span<const PoolBinding> bindings);

}  // namespace heal
