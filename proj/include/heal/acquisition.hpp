#pragma once

// Pool bookkeeping and batch acquisition.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "heal/ensemble.hpp"

namespace heal {

enum class Strategy { random, confidence, entropy, margin_naive, heal, heal_diverse };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);
std::span<const Strategy> all_strategies();

struct AcquisitionConfig {
  Strategy strategy = Strategy::heal;
  std::size_t batch_size = 20;
  double gamma = 0.4;
  std::size_t n_init = 20;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const AcquisitionConfig&, const AcquisitionConfig&) = default;
};

// Labeled / unlabeled partition of a pool. Labeled indices keep acquisition
// order; unlabeled ones are kept ascending.
class PoolState {
 public:
  PoolState() = default;
  explicit PoolState(std::size_t pool_size);

  std::size_t size() const { return labeled_flag_.size(); }
  const std::vector<std::size_t>& labeled() const { return labeled_; }
  const std::vector<std::size_t>& labels() const { return labels_; }
  std::vector<std::size_t> unlabeled() const;
  std::size_t unlabeled_count() const { return size() - labeled_.size(); }
  bool is_labeled(std::size_t index) const { return labeled_flag_.at(index) != 0; }
  std::uint64_t round() const { return round_; }

  // Moves indices into the labeled set. Rejects out-of-range, duplicate or
  // already labeled indices without changing anything.
  void add_labeled(std::span<const std::size_t> indices, std::span<const std::size_t> labels);
  void advance_round() { ++round_; }
  void set_round(std::uint64_t round) { round_ = round; }

  friend bool operator==(const PoolState&, const PoolState&) = default;

 private:
  std::vector<char> labeled_flag_;
  std::vector<std::size_t> labeled_;
  std::vector<std::size_t> labels_;
  std::uint64_t round_ = 0;
};

// Seeded sample of n distinct pool indices in draw order.
std::vector<std::size_t> select_initial(std::size_t pool_size, std::size_t n, std::uint64_t seed);

// Labels any pool index. Throws to signal failure.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::size_t label(std::size_t index) = 0;
};

class SimulatedOracle : public Oracle {
 public:
  explicit SimulatedOracle(std::span<const std::size_t> truth) : truth_(truth) {}
  std::size_t label(std::size_t index) override;

 private:
  std::span<const std::size_t> truth_;
};

struct ScoringContext {
  const Ensemble* ensemble = nullptr;
  const EncodedPool* pool = nullptr;
  const PriorSimilarityCache* cache = nullptr;  // optional
  std::size_t workers = 0;
};

// Scores and pseudo-labels for a list of candidates; higher score is
// acquired first.
struct PoolScores {
  std::vector<std::size_t> candidates;
  std::vector<double> scores;
  std::vector<std::size_t> pseudo_labels;
};

PoolScores score_pool(const ScoringContext& ctx, std::span<const std::size_t> candidates,
                      Strategy strategy, std::uint64_t seed, std::uint64_t round);

// One step of the diversity walk.
struct WalkStep {
  std::size_t index = 0;
  std::size_t pseudo_label = 0;
  double similarity = 0.0;  // against the class memory before this step
  bool admitted = false;
};

struct AcquisitionBatch {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
  std::vector<std::size_t> pseudo_labels;
  std::vector<std::size_t> skipped;
  std::vector<WalkStep> walk;      // diverse selection only
  std::size_t filled_from_skipped = 0;

  std::size_t size() const { return indices.size(); }
};

// Candidates ordered by descending score, lower index first on ties.
std::vector<std::size_t> rank_order(const PoolScores& scores);

AcquisitionBatch select_batch_topk(const PoolScores& scores, std::size_t k);

AcquisitionBatch select_batch_diverse(const PoolScores& scores, const EncodedPool& pool,
                                      std::size_t classes, std::size_t k, double gamma);

// Recomputes every walk step from scratch; true when similarities match
// bit-for-bit and every admission satisfied similarity <= gamma.
bool replay_walk(const AcquisitionBatch& batch, const EncodedPool& pool, std::size_t classes,
                 double gamma);

AcquisitionBatch propose_batch(const ScoringContext& ctx, const PoolState& state,
                               const AcquisitionConfig& config);

struct RoundReport {
  std::uint64_t round = 0;  // round after the step
  AcquisitionBatch batch;
  std::vector<std::size_t> labels;
};

// Select, label through the oracle, move to the labeled set, advance the
// round. On oracle failure the state is left untouched and the error
// propagates.
RoundReport acquire_step(PoolState& state, const ScoringContext& ctx,
                         const AcquisitionConfig& config, Oracle& oracle);

}  // namespace heal
