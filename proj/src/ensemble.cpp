#include "heal/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "heal/error.hpp"
#include "heal/kernels.hpp"
#include "heal/parallel.hpp"

namespace heal {

std::string_view to_string(PriorMode mode) {
  switch (mode) {
    case PriorMode::isolated:
      return "isolated";
    case PriorMode::combined:
      return "combined";
    case PriorMode::none:
      return "none";
  }
  return "unknown";
}

PriorMode parse_prior_mode(std::string_view text) {
  if (text == "isolated") return PriorMode::isolated;
  if (text == "combined") return PriorMode::combined;
  if (text == "none") return PriorMode::none;
  throw ConfigError("unknown prior_mode: " + std::string(text));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(target_train_accuracy > 0.0 && target_train_accuracy <= 1.0))
    throw ConfigError("target_train_accuracy must be in (0, 1]");
  if (!(regen_fraction >= 0.0 && regen_fraction < 1.0))
    throw ConfigError("regen_fraction must be in [0, 1)");
  if (regen_interval == 0) throw ConfigError("regen_interval must be positive");
}

namespace {

inline double sim_from_dot(double dot, double norm_a, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return std::clamp(dot / (norm_a * norm_b), -1.0, 1.0);
}

void fill_prior_row(HypervectorMatrix& prior, std::size_t cls, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto row = prior.row(cls);
  for (std::size_t d = 0; d < row.dim(); ++d) {
    row.re[d] = normal(rng);
    row.im[d] = normal(rng);
  }
}

}  // namespace

void SubModel::reset_model() {
  std::fill(model.re_data().begin(), model.re_data().end(), 0.0);
  std::fill(model.im_data().begin(), model.im_data().end(), 0.0);
  refresh_all_norms();
}

void SubModel::refresh_norms(std::size_t cls) {
  const auto m = model.row(cls);
  const auto p = prior.row(cls);
  const double mm = sq_norm(m);
  const double pp = sq_norm(p);
  model_norms[cls] = std::sqrt(mm);
  prior_norms[cls] = std::sqrt(pp);
  combined_norms[cls] = std::sqrt(std::max(0.0, mm + 2.0 * dot_re(m, p) + pp));
}

void SubModel::refresh_all_norms() {
  const std::size_t c = model.rows();
  model_norms.assign(c, 0.0);
  prior_norms.assign(c, 0.0);
  combined_norms.assign(c, 0.0);
  for (std::size_t l = 0; l < c; ++l) refresh_norms(l);
}

Ensemble init_ensemble(const EnsembleShape& shape, const TrainConfig& config,
                       NormalizationStats stats) {
  if (shape.members == 0) throw ConfigError("ensemble needs at least one sub-model");
  if (shape.classes < 2) throw ConfigError("ensemble needs at least two classes");
  if (shape.dim == 0 || shape.features == 0) throw ConfigError("dimension and features must be positive");
  if (stats.features() != shape.features)
    throw ConfigError("normalization stats do not match feature count");
  config.validate();

  Ensemble ens;
  ens.shape = shape;
  ens.config = config;
  ens.theta = PhaseMatrix::random(shape.features, shape.dim, config.seed);
  ens.stats = std::move(stats);
  ens.members.resize(shape.members);
  for (std::size_t e = 0; e < shape.members; ++e) {
    auto& sub = ens.members[e];
    sub.model = HypervectorMatrix(shape.classes, shape.dim);
    sub.prior = HypervectorMatrix(shape.classes, shape.dim);
    Rng rng = derive_stream(config.seed, Stream::prior, e);
    for (std::size_t c = 0; c < shape.classes; ++c) fill_prior_row(sub.prior, c, rng);
    sub.refresh_all_norms();
  }
  return ens;
}

PriorSimilarityCache build_prior_cache(const EncodedPool& pool, const Ensemble& ensemble,
                                       std::size_t workers) {
  PriorSimilarityCache cache;
  cache.samples = pool.size();
  cache.members = ensemble.size();
  cache.classes = ensemble.classes();
  cache.table.assign(cache.samples * cache.members * cache.classes, 0.0);
  cache.query_norms.assign(cache.samples, 0.0);
  if (cache.samples == 0) return cache;
  if (pool.dim() != ensemble.dim()) throw Error("pool dimension does not match ensemble");
  const auto& k = kernels::active();
  const std::size_t c = cache.classes, d = ensemble.dim();
  parallel_for(cache.samples, workers, [&](std::size_t i) {
    const auto h = pool.encoding(i);
    const double qn = std::sqrt(sq_norm(h));
    cache.query_norms[i] = qn;
    std::vector<double> dots(c);
    for (std::size_t e = 0; e < cache.members; ++e) {
      const auto& sub = ensemble.members[e];
      k.dot_re_rows(h.re.data(), h.im.data(), sub.prior.re_data().data(),
                    sub.prior.im_data().data(), c, d, dots.data());
      double* out = cache.table.data() + (i * cache.members + e) * c;
      for (std::size_t l = 0; l < c; ++l) out[l] = sim_from_dot(dots[l], qn, sub.prior_norms[l]);
    }
  });
  return cache;
}

Query make_query(ComplexView h) { return Query{h, norm(h), {}}; }

Query make_query(const EncodedPool& pool, const PriorSimilarityCache* cache, std::size_t index) {
  if (cache == nullptr || cache->empty()) return make_query(pool.encoding(index));
  return Query{pool.encoding(index), cache->query_norms[index], cache->row(index)};
}

void member_scores(const Query& q, const Ensemble& ensemble, std::size_t member, PriorMode mode,
                   std::span<double> out) {
  const auto& sub = ensemble.members[member];
  const std::size_t c = sub.classes(), d = ensemble.dim();
  if (q.h.dim() != d) throw Error("query dimension does not match ensemble");
  const auto& k = kernels::active();

  double model_dots[64];
  std::vector<double> heap;
  double* dots = model_dots;
  if (c > 64) {
    heap.resize(c);
    dots = heap.data();
  }
  k.dot_re_rows(q.h.re.data(), q.h.im.data(), sub.model.re_data().data(),
                sub.model.im_data().data(), c, d, dots);

  if (mode == PriorMode::none) {
    for (std::size_t l = 0; l < c; ++l) out[l] = sim_from_dot(dots[l], q.norm, sub.model_norms[l]);
    return;
  }

  // Prior similarity per class, cached or direct.
  std::vector<double> prior_sims(c);
  if (!q.prior_sims.empty()) {
    std::copy_n(q.prior_sims.begin() + static_cast<std::ptrdiff_t>(member * c), c,
                prior_sims.begin());
  } else {
    std::vector<double> pdots(c);
    k.dot_re_rows(q.h.re.data(), q.h.im.data(), sub.prior.re_data().data(),
                  sub.prior.im_data().data(), c, d, pdots.data());
    for (std::size_t l = 0; l < c; ++l) prior_sims[l] = sim_from_dot(pdots[l], q.norm, sub.prior_norms[l]);
  }

  if (mode == PriorMode::isolated) {
    for (std::size_t l = 0; l < c; ++l)
      out[l] = sim_from_dot(dots[l], q.norm, sub.model_norms[l]) + prior_sims[l];
  } else {
    for (std::size_t l = 0; l < c; ++l) {
      const double prior_dot = prior_sims[l] * q.norm * sub.prior_norms[l];
      out[l] = sim_from_dot(dots[l] + prior_dot, q.norm, sub.combined_norms[l]);
    }
  }
}

double combined_score(const Query& q, const Ensemble& ensemble, std::size_t member, std::size_t cls,
                      PriorMode mode) {
  const auto& sub = ensemble.members[member];
  const auto m = sub.model.row(cls);
  const double model_dot = dot_re(q.h, m);
  const double model_sim = sim_from_dot(model_dot, q.norm, sub.model_norms[cls]);
  if (mode == PriorMode::none) return model_sim;
  double prior_sim;
  if (!q.prior_sims.empty()) {
    prior_sim = q.prior_sims[member * sub.classes() + cls];
  } else {
    prior_sim = sim_from_dot(dot_re(q.h, sub.prior.row(cls)), q.norm, sub.prior_norms[cls]);
  }
  if (mode == PriorMode::isolated) return model_sim + prior_sim;
  return sim_from_dot(model_dot + prior_sim * q.norm * sub.prior_norms[cls], q.norm,
                      sub.combined_norms[cls]);
}

std::vector<double> score_table(const Query& q, const Ensemble& ensemble) {
  const std::size_t c = ensemble.classes();
  std::vector<double> table(ensemble.size() * c);
  for (std::size_t e = 0; e < ensemble.size(); ++e)
    member_scores(q, ensemble, e, ensemble.config.prior_mode,
                  std::span<double>(table).subspan(e * c, c));
  return table;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

SubModelPrediction predict_submodel(const Query& q, const Ensemble& ensemble, std::size_t member) {
  SubModelPrediction out;
  out.scores.resize(ensemble.classes());
  member_scores(q, ensemble, member, ensemble.config.prior_mode, out.scores);
  out.label = argmax(out.scores);
  return out;
}

EnsemblePrediction vote(std::span<const std::size_t> votes, std::size_t classes) {
  EnsemblePrediction out;
  out.distribution.votes.assign(votes.begin(), votes.end());
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t v : votes) {
    if (v >= classes) throw Error("vote label out of range");
    ++counts[v];
  }
  out.distribution.probs.resize(classes);
  const double total = static_cast<double>(votes.size());
  for (std::size_t l = 0; l < classes; ++l)
    out.distribution.probs[l] = total == 0.0 ? 0.0 : static_cast<double>(counts[l]) / total;
  out.label = static_cast<std::size_t>(
      std::distance(counts.begin(), std::max_element(counts.begin(), counts.end())));
  return out;
}

EnsemblePrediction predict_ensemble(const Query& q, const Ensemble& ensemble) {
  const std::size_t c = ensemble.classes();
  const auto table = score_table(q, ensemble);
  std::vector<std::size_t> votes(ensemble.size());
  for (std::size_t e = 0; e < ensemble.size(); ++e)
    votes[e] = argmax(std::span<const double>(table).subspan(e * c, c));
  return vote(votes, c);
}

double predictive_entropy(const VoteDistribution& v) {
  double h = 0.0;
  for (double p : v.probs)
    if (p > 0.0) h -= p * std::log(p);
  return std::max(0.0, h);
}

std::vector<double> average_scores(const Query& q, const Ensemble& ensemble) {
  const std::size_t c = ensemble.classes();
  const auto table = score_table(q, ensemble);
  std::vector<double> avg(c, 0.0);
  for (std::size_t e = 0; e < ensemble.size(); ++e)
    for (std::size_t l = 0; l < c; ++l) avg[l] += table[e * c + l];
  for (auto& a : avg) a /= static_cast<double>(ensemble.size());
  return avg;
}

double margin_from_scores(std::span<const double> averaged) {
  if (averaged.size() < 2) throw ConfigError("margin needs at least two classes");
  double best = averaged[0], second = averaged[1];
  if (second > best) std::swap(best, second);
  for (std::size_t l = 2; l < averaged.size(); ++l) {
    if (averaged[l] > best) {
      second = best;
      best = averaged[l];
    } else if (averaged[l] > second) {
      second = averaged[l];
    }
  }
  return second - best;
}

double margin_score(const Query& q, const Ensemble& ensemble) {
  return margin_from_scores(average_scores(q, ensemble));
}

std::vector<double> dimension_variance(const Ensemble& ensemble) {
  const std::size_t d = ensemble.dim(), c = ensemble.classes();
  std::vector<double> var(d, 0.0);
  for (const auto& sub : ensemble.members) {
    const auto re = sub.model.re_data();
    const auto im = sub.model.im_data();
    for (std::size_t j = 0; j < d; ++j) {
      double mr = 0.0, mi = 0.0;
      for (std::size_t l = 0; l < c; ++l) {
        mr += re[l * d + j];
        mi += im[l * d + j];
      }
      mr /= static_cast<double>(c);
      mi /= static_cast<double>(c);
      double v = 0.0;
      for (std::size_t l = 0; l < c; ++l) {
        const double dr = re[l * d + j] - mr;
        const double di = im[l * d + j] - mi;
        v += dr * dr + di * di;
      }
      var[j] += v / static_cast<double>(c);
    }
  }
  for (auto& v : var) v /= static_cast<double>(ensemble.size());
  const double total = std::accumulate(var.begin(), var.end(), 0.0);
  if (total > 0.0)
    for (auto& v : var) v /= total;
  return var;
}

std::vector<std::size_t> select_regen_dims(std::span<const double> variance, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("regen fraction must be in [0, 1)");
  const auto count = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(variance.size()) + 1e-9));
  std::vector<std::size_t> order(variance.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return variance[a] < variance[b]; });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> neuralhd_regenerate(Ensemble& ensemble, double fraction,
                                             std::span<const PoolBinding> bindings) {
  const auto dims = select_regen_dims(dimension_variance(ensemble), fraction);
  if (dims.empty()) return dims;

  Rng rng = derive_stream(ensemble.config.seed, Stream::regenerate, ensemble.regen_events);
  ++ensemble.regen_events;
  ensemble.theta.regenerate_columns(dims, rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& sub : ensemble.members) {
    for (std::size_t l = 0; l < sub.classes(); ++l) {
      auto p = sub.prior.row(l);
      auto m = sub.model.row(l);
      for (std::size_t j : dims) {
        p.re[j] = normal(rng);
        p.im[j] = normal(rng);
        m.re[j] = 0.0;
        m.im[j] = 0.0;
      }
    }
    sub.refresh_all_norms();
  }

  for (const auto& b : bindings) {
    if (b.pool == nullptr) continue;
    b.pool->reencode_dims(ensemble.theta, dims, ensemble.config.workers);
    if (b.cache != nullptr) *b.cache = build_prior_cache(*b.pool, ensemble, ensemble.config.workers);
  }
  return dims;
}

namespace {

struct MemberState {
  std::vector<std::size_t> positions;  // into TrainingSet indices (bootstrap resample)
  Rng shuffle;
  MemberReport report;
  bool converged = false;
};

// One pass over the member's resample. Returns the fraction predicted
// correctly before any update on that sample.
double train_epoch(Ensemble& ensemble, std::size_t member, MemberState& state,
                   const TrainingSet& data) {
  auto& sub = ensemble.members[member];
  const std::size_t c = ensemble.classes();
  const double lr = ensemble.config.learning_rate;
  const PriorMode mode = ensemble.config.prior_mode;
  std::shuffle(state.positions.begin(), state.positions.end(), state.shuffle);
  std::vector<double> scores(c);
  std::size_t correct = 0;
  for (std::size_t pos : state.positions) {
    const std::size_t idx = data.indices[pos];
    const std::size_t truth = data.labels[pos];
    const Query q = make_query(*data.pool, data.cache, idx);
    member_scores(q, ensemble, member, mode, scores);
    const std::size_t pred = argmax(scores);
    if (pred == truth) {
      ++correct;
      continue;
    }
    bundle_into(sub.model.row(truth), q.h, lr * (1.0 - scores[truth]));
    bundle_into(sub.model.row(pred), q.h, lr * (scores[pred] - 1.0));
    sub.refresh_norms(truth);
    sub.refresh_norms(pred);
    ++state.report.updates;
  }
  return static_cast<double>(correct) / static_cast<double>(state.positions.size());
}

}  // namespace

TrainingReport fit(Ensemble& ensemble, const TrainingSet& data, std::uint64_t round,
                   std::span<const PoolBinding> bindings) {
  const auto& cfg = ensemble.config;
  cfg.validate();
  if (data.pool == nullptr || data.indices.empty()) throw Error("empty labeled set");
  if (data.indices.size() != data.labels.size()) throw Error("labels and indices differ in length");
  for (std::size_t i = 0; i < data.indices.size(); ++i) {
    if (data.labels[i] >= ensemble.classes()) throw Error("label out of range");
    if (data.indices[i] >= data.pool->size()) throw Error("training index out of range");
  }

  const std::size_t n = data.indices.size();
  std::vector<MemberState> states(ensemble.size());
  for (std::size_t e = 0; e < ensemble.size(); ++e) {
    auto& st = states[e];
    st.positions.resize(n);
    if (cfg.bootstrap) {
      Rng rng = derive_stream(cfg.seed, Stream::bootstrap, round, e);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& p : st.positions) p = pick(rng);
    } else {
      std::iota(st.positions.begin(), st.positions.end(), 0);
    }
    st.shuffle = derive_stream(cfg.seed, Stream::shuffle, round, e);
    ensemble.members[e].reset_model();
  }

  const bool regen = cfg.regen_fraction > 0.0;
  const std::size_t block = regen ? cfg.regen_interval : cfg.max_epochs;
  TrainingReport report;
  auto active = [&](const MemberState& st) {
    return !st.converged && st.report.epochs < cfg.max_epochs;
  };

  while (std::any_of(states.begin(), states.end(), active)) {
    parallel_for(ensemble.size(), cfg.workers, [&](std::size_t e) {
      auto& st = states[e];
      for (std::size_t b = 0; b < block && active(st); ++b) {
        st.report.train_accuracy = train_epoch(ensemble, e, st, data);
        ++st.report.epochs;
        st.converged = st.report.train_accuracy >= cfg.target_train_accuracy;
      }
    });
    if (!regen || !std::any_of(states.begin(), states.end(), active)) break;
    neuralhd_regenerate(ensemble, cfg.regen_fraction, bindings);
    ++report.regen_events;
    for (auto& st : states) st.converged = false;
  }

  for (auto& st : states) report.members.push_back(st.report);
  return report;
}

}  // namespace heal
