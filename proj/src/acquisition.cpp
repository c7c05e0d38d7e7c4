#include "heal/acquisition.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "heal/error.hpp"
#include "heal/parallel.hpp"

namespace heal {

namespace {

constexpr std::array kStrategies{Strategy::random,       Strategy::confidence, Strategy::entropy,
                                 Strategy::margin_naive, Strategy::heal,       Strategy::heal_diverse};

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random:
      return "random";
    case Strategy::confidence:
      return "confidence";
    case Strategy::entropy:
      return "entropy";
    case Strategy::margin_naive:
      return "margin_naive";
    case Strategy::heal:
      return "heal";
    case Strategy::heal_diverse:
      return "heal_diverse";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : kStrategies)
    if (to_string(s) == text) return s;
  throw ConfigError("unknown strategy: " + std::string(text));
}

std::span<const Strategy> all_strategies() { return kStrategies; }

void AcquisitionConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(gamma >= -1.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [-1, 1]");
  if (n_init == 0) throw ConfigError("n_init must be positive");
}

PoolState::PoolState(std::size_t pool_size) : labeled_flag_(pool_size, 0) {}

std::vector<std::size_t> PoolState::unlabeled() const {
  std::vector<std::size_t> out;
  out.reserve(unlabeled_count());
  for (std::size_t i = 0; i < labeled_flag_.size(); ++i)
    if (!labeled_flag_[i]) out.push_back(i);
  return out;
}

void PoolState::add_labeled(std::span<const std::size_t> indices,
                            std::span<const std::size_t> labels) {
  if (indices.size() != labels.size()) throw Error("indices and labels differ in length");
  std::vector<char> seen(size(), 0);
  for (std::size_t i : indices) {
    if (i >= size()) throw Error("pool index out of range: " + std::to_string(i));
    if (labeled_flag_[i] || seen[i]) throw Error("index already labeled: " + std::to_string(i));
    seen[i] = 1;
  }
  for (std::size_t j = 0; j < indices.size(); ++j) {
    labeled_flag_[indices[j]] = 1;
    labeled_.push_back(indices[j]);
    labels_.push_back(labels[j]);
  }
}

std::vector<std::size_t> select_initial(std::size_t pool_size, std::size_t n, std::uint64_t seed) {
  if (n > pool_size) throw ConfigError("n_init exceeds pool size");
  std::vector<std::size_t> all(pool_size);
  std::iota(all.begin(), all.end(), 0);
  Rng rng = derive_stream(seed, Stream::initial_labeled);
  // Partial Fisher-Yates with an explicit distribution for portability of
  // the draw sequence.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool_size - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(n);
  return all;
}

std::size_t SimulatedOracle::label(std::size_t index) {
  if (index >= truth_.size()) throw Error("oracle has no label for index " + std::to_string(index));
  return truth_[index];
}

PoolScores score_pool(const ScoringContext& ctx, std::span<const std::size_t> candidates,
                      Strategy strategy, std::uint64_t seed, std::uint64_t round) {
  if (ctx.ensemble == nullptr || ctx.pool == nullptr) throw Error("scoring context incomplete");
  const Ensemble& ens = *ctx.ensemble;
  const std::size_t c = ens.classes(), e = ens.size();
  PoolScores out;
  out.candidates.assign(candidates.begin(), candidates.end());
  out.scores.assign(candidates.size(), 0.0);
  out.pseudo_labels.assign(candidates.size(), 0);

  std::vector<double> random_draws;
  if (strategy == Strategy::random) {
    // One draw per pool index so a sample's score does not depend on which
    // others are still unlabeled, or on the model.
    Rng rng = derive_stream(seed, Stream::random_scores, round);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    random_draws.resize(ctx.pool->size());
    for (auto& v : random_draws) v = unit(rng);
  }

  parallel_for(candidates.size(), ctx.workers, [&](std::size_t j) {
    const std::size_t idx = candidates[j];
    if (idx >= ctx.pool->size()) throw Error("candidate index out of range");
    const Query q = make_query(*ctx.pool, ctx.cache, idx);

    if (strategy == Strategy::margin_naive) {
      std::vector<double> s(c);
      member_scores(q, ens, 0, PriorMode::none, s);
      out.scores[j] = margin_from_scores(s);
      out.pseudo_labels[j] = argmax(s);
      return;
    }

    const auto table = score_table(q, ens);
    std::vector<std::size_t> votes(e);
    std::vector<double> avg(c, 0.0);
    for (std::size_t m = 0; m < e; ++m) {
      const auto row = std::span<const double>(table).subspan(m * c, c);
      votes[m] = argmax(row);
      for (std::size_t l = 0; l < c; ++l) avg[l] += row[l];
    }
    const auto pred = vote(votes, c);
    out.pseudo_labels[j] = pred.label;
    switch (strategy) {
      case Strategy::random:
        out.scores[j] = random_draws[idx];
        break;
      case Strategy::confidence:
        out.scores[j] = -*std::max_element(pred.distribution.probs.begin(), pred.distribution.probs.end());
        break;
      case Strategy::entropy:
        out.scores[j] = predictive_entropy(pred.distribution);
        break;
      case Strategy::heal:
      case Strategy::heal_diverse:
        for (auto& a : avg) a /= static_cast<double>(e);
        out.scores[j] = margin_from_scores(avg);
        break;
      case Strategy::margin_naive:
        break;
    }
  });
  return out;
}

std::vector<std::size_t> rank_order(const PoolScores& s) {
  std::vector<std::size_t> order(s.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s.scores[a] != s.scores[b]) return s.scores[a] > s.scores[b];
    return s.candidates[a] < s.candidates[b];
  });
  return order;
}

namespace {

void push(AcquisitionBatch& batch, const PoolScores& s, std::size_t j) {
  batch.indices.push_back(s.candidates[j]);
  batch.scores.push_back(s.scores[j]);
  batch.pseudo_labels.push_back(s.pseudo_labels[j]);
}

}  // namespace

AcquisitionBatch select_batch_topk(const PoolScores& scores, std::size_t k) {
  if (k == 0) throw ConfigError("batch size must be positive");
  AcquisitionBatch batch;
  const auto order = rank_order(scores);
  for (std::size_t r = 0; r < order.size() && r < k; ++r) push(batch, scores, order[r]);
  return batch;
}

AcquisitionBatch select_batch_diverse(const PoolScores& scores, const EncodedPool& pool,
                                      std::size_t classes, std::size_t k, double gamma) {
  if (k == 0) throw ConfigError("batch size must be positive");
  AcquisitionBatch batch;
  HypervectorMatrix memory(classes, pool.dim());
  std::vector<double> memory_norm(classes, 0.0);
  std::vector<std::size_t> skipped_rank;
  const auto order = rank_order(scores);
  for (std::size_t j : order) {
    if (batch.size() == k) break;
    const std::size_t idx = scores.candidates[j];
    const std::size_t l = scores.pseudo_labels[j];
    const auto h = pool.encoding(idx);
    const double sim = similarity_with_norms(h, memory.row(l), norm(h), memory_norm[l]);
    const bool admit = sim <= gamma;
    batch.walk.push_back({idx, l, sim, admit});
    if (admit) {
      push(batch, scores, j);
      bundle_into(memory.row(l), h);
      memory_norm[l] = norm(memory.row(l));
    } else {
      batch.skipped.push_back(idx);
      skipped_rank.push_back(j);
    }
  }
  for (std::size_t j : skipped_rank) {
    if (batch.size() == k) break;
    push(batch, scores, j);
    ++batch.filled_from_skipped;
  }
  return batch;
}

bool replay_walk(const AcquisitionBatch& batch, const EncodedPool& pool, std::size_t classes,
                 double gamma) {
  HypervectorMatrix memory(classes, pool.dim());
  std::vector<double> memory_norm(classes, 0.0);
  std::size_t admitted = 0;
  for (const auto& step : batch.walk) {
    if (step.index >= pool.size() || step.pseudo_label >= classes) return false;
    const auto h = pool.encoding(step.index);
    const double sim =
        similarity_with_norms(h, memory.row(step.pseudo_label), norm(h), memory_norm[step.pseudo_label]);
    if (sim != step.similarity || step.admitted != (sim <= gamma)) return false;
    if (step.admitted) {
      if (admitted >= batch.indices.size() || batch.indices[admitted] != step.index) return false;
      ++admitted;
      bundle_into(memory.row(step.pseudo_label), h);
      memory_norm[step.pseudo_label] = norm(memory.row(step.pseudo_label));
    }
  }
  return admitted + batch.filled_from_skipped == batch.indices.size();
}

AcquisitionBatch propose_batch(const ScoringContext& ctx, const PoolState& state,
                               const AcquisitionConfig& config) {
  config.validate();
  const auto candidates = state.unlabeled();
  if (candidates.empty()) return {};
  const auto scores = score_pool(ctx, candidates, config.strategy, config.seed, state.round());
  if (config.strategy == Strategy::heal_diverse)
    return select_batch_diverse(scores, *ctx.pool, ctx.ensemble->classes(), config.batch_size,
                                config.gamma);
  return select_batch_topk(scores, config.batch_size);
}

RoundReport acquire_step(PoolState& state, const ScoringContext& ctx,
                         const AcquisitionConfig& config, Oracle& oracle) {
  RoundReport report;
  report.batch = propose_batch(ctx, state, config);
  report.labels.reserve(report.batch.size());
  for (std::size_t idx : report.batch.indices) report.labels.push_back(oracle.label(idx));
  state.add_labeled(report.batch.indices, report.labels);
  state.advance_round();
  report.round = state.round();
  return report;
}

}  // namespace heal
