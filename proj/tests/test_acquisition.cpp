#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "heal/acquisition.hpp"
#include "heal/error.hpp"
#include "test_support.hpp"

using namespace heal;

namespace {

PoolScores make_scores(std::vector<double> s) {
  PoolScores p;
  p.scores = std::move(s);
  p.candidates.resize(p.scores.size());
  std::iota(p.candidates.begin(), p.candidates.end(), 0);
  p.pseudo_labels.assign(p.scores.size(), 0);
  return p;
}

// Gaussian clusters; `copies` consecutive duplicates of each unique row.
struct Fixture {
  FeatureMatrix x;
  std::vector<std::size_t> y;
  std::vector<std::size_t> unique_id;
};

Fixture clusters(std::size_t classes, std::size_t per_class, std::size_t copies, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = 8;
  std::vector<double> centers(classes * n);
  for (auto& c : centers) c = 3.0 * normal(rng);
  Fixture f{FeatureMatrix(classes * per_class * copies, n), {}, {}};
  std::size_t row = 0;
  for (std::size_t u = 0; u < classes * per_class; ++u) {
    const std::size_t c = u % classes;
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = centers[c * n + k] + normal(rng);
    for (std::size_t r = 0; r < copies; ++r, ++row) {
      std::copy(v.begin(), v.end(), f.x.row(row).begin());
      f.y.push_back(c);
      f.unique_id.push_back(u);
    }
  }
  return f;
}

struct Trained {
  Ensemble ens;
  EncodedPool pool;
  PriorSimilarityCache cache;
  PoolState state;
};

Trained train_on_initial(const Fixture& f, std::size_t classes, std::size_t n_init, std::uint64_t seed,
                         TrainConfig cfg = {}) {
  cfg.seed = seed;
  Trained t;
  t.ens = init_ensemble({classes, 1000, 8, f.x.cols()}, cfg, fit_normalizer(f.x));
  t.pool = EncodedPool(f.x, t.ens.theta, t.ens.stats);
  t.cache = build_prior_cache(t.pool, t.ens);
  t.state = PoolState(f.x.rows());
  const auto init = select_initial(f.x.rows(), n_init, seed);
  std::vector<std::size_t> labels;
  for (std::size_t i : init) labels.push_back(f.y[i]);
  t.state.add_labeled(init, labels);
  fit(t.ens, {&t.pool, &t.cache, t.state.labeled(), t.state.labels()}, 0);
  return t;
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (Strategy s : all_strategies()) CHECK(parse_strategy(to_string(s)) == s);
  CHECK(all_strategies().size() == 6);
  CHECK_THROWS_AS(parse_strategy("badge"), ConfigError);
}

TEST_CASE("acquisition config validation") {
  AcquisitionConfig cfg;
  CHECK(cfg.gamma == 0.4);
  CHECK(cfg.n_init == 20);
  cfg.validate();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_size = 1;
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("pool state partition") {
  PoolState s(6);
  std::vector<std::size_t> a{4, 1}, la{0, 1};
  s.add_labeled(a, la);
  CHECK(s.labeled() == a);
  CHECK(s.unlabeled() == std::vector<std::size_t>{0, 2, 3, 5});
  std::vector<std::size_t> dup{2, 4}, ld{0, 0};
  CHECK_THROWS(s.add_labeled(dup, ld));
  CHECK(s.unlabeled().size() == 4);  // unchanged after rejection
  std::vector<std::size_t> twice{3, 3};
  CHECK_THROWS(s.add_labeled(twice, ld));
  std::vector<std::size_t> oob{6}, l1{0};
  CHECK_THROWS(s.add_labeled(oob, l1));
}

TEST_CASE("initial selection is seeded and distinct") {
  auto a = select_initial(100, 20, 3);
  CHECK(a == select_initial(100, 20, 3));
  CHECK(a != select_initial(100, 20, 4));
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 20);
  CHECK_THROWS_AS(select_initial(5, 6, 0), ConfigError);
}

TEST_CASE("top-k ordering and ties") {
  auto b = select_batch_topk(make_scores({-0.1, -1.3, -0.05}), 2);
  CHECK(b.indices == std::vector<std::size_t>{2, 0});
  CHECK(select_batch_topk(make_scores({-0.1, -1.3, -0.05}), 10).size() == 3);
  CHECK(select_batch_topk(make_scores({0.0, 0.0, 0.0, 0.0}), 2).indices ==
        std::vector<std::size_t>{0, 1});
  CHECK(select_batch_topk(make_scores({}), 3).size() == 0);
}

TEST_CASE("diversity filter admits the first candidate and skips duplicates") {
  Rng rng(2);
  auto h = heal::test::random_phasor(512, rng);
  auto g = heal::test::random_phasor(512, rng);
  FeatureMatrix dummy(3, 1);
  // Build a pool directly from encodings: rows 0 and 1 identical, row 2 fresh.
  PhaseMatrix theta(1, 512, std::vector<double>(512, 0.0), 0);
  EncodedPool pool(dummy, theta, NormalizationStats::identity(1));
  auto& enc = const_cast<HypervectorMatrix&>(pool.encodings());
  for (std::size_t d = 0; d < 512; ++d) {
    enc.row(0).re[d] = enc.row(1).re[d] = h.re()[d];
    enc.row(0).im[d] = enc.row(1).im[d] = h.im()[d];
    enc.row(2).re[d] = g.re()[d];
    enc.row(2).im[d] = g.im()[d];
  }
  auto scores = make_scores({-0.1, -0.2, -0.3});
  auto b = select_batch_diverse(scores, pool, 2, 2, 0.4);
  CHECK(b.indices == std::vector<std::size_t>{0, 2});
  CHECK(b.skipped == std::vector<std::size_t>{1});
  REQUIRE(b.walk.size() == 3);
  CHECK(b.walk[0].similarity == 0.0);
  CHECK(std::abs(b.walk[1].similarity - 1.0) < 1e-12);
  CHECK(b.filled_from_skipped == 0);
  CHECK(replay_walk(b, pool, 2, 0.4));

  // Different pseudo-labels use separate memories, so the duplicate passes.
  scores.pseudo_labels = {0, 1, 0};
  auto c = select_batch_diverse(scores, pool, 2, 2, 0.4);
  CHECK(c.indices == std::vector<std::size_t>{0, 1});

  // Underfill: K=3 walks the whole pool and fills from skipped.
  scores.pseudo_labels = {0, 0, 0};
  auto d = select_batch_diverse(scores, pool, 2, 3, 0.4);
  CHECK(d.indices == std::vector<std::size_t>{0, 2, 1});
  CHECK(d.filled_from_skipped == 1);
  CHECK(replay_walk(d, pool, 2, 0.4));

  // Tampered trace fails replay.
  auto bad = b;
  bad.walk[2].similarity += 1e-3;
  CHECK_FALSE(replay_walk(bad, pool, 2, 0.4));
}

TEST_CASE("similarity exactly at gamma is admitted") {
  // Memory holds e0; candidate (1,1,1,1) has similarity 1 / 2 against it.
  FeatureMatrix dummy(2, 1);
  PhaseMatrix theta(1, 4, std::vector<double>(4, 0.0), 0);
  EncodedPool pool(dummy, theta, NormalizationStats::identity(1));
  auto& enc = const_cast<HypervectorMatrix&>(pool.encodings());
  std::fill(enc.im_data().begin(), enc.im_data().end(), 0.0);
  std::fill(enc.re_data().begin(), enc.re_data().end(), 1.0);
  enc.row(0).re[1] = enc.row(0).re[2] = enc.row(0).re[3] = 0.0;
  auto scores = make_scores({1.0, 0.5});
  auto b = select_batch_diverse(scores, pool, 1, 2, 0.5);
  REQUIRE(b.walk.size() == 2);
  CHECK(b.walk[1].similarity == 0.5);
  CHECK(b.walk[1].admitted);
  CHECK(b.filled_from_skipped == 0);
  auto strict = select_batch_diverse(scores, pool, 1, 2, 0.49);
  CHECK_FALSE(strict.walk[1].admitted);
}

TEST_CASE("gamma one reduces to top-k") {
  const auto f = clusters(4, 30, 1, 7);
  auto t = train_on_initial(f, 4, 20, 7);
  ScoringContext ctx{&t.ens, &t.pool, &t.cache, 2};
  const auto candidates = t.state.unlabeled();
  const auto scores = score_pool(ctx, candidates, Strategy::heal, 0, 0);
  for (std::size_t k : {1u, 10u, 40u}) {
    auto top = select_batch_topk(scores, k);
    auto div = select_batch_diverse(scores, t.pool, 4, k, 1.0);
    CHECK(div.indices == top.indices);
    CHECK(div.filled_from_skipped == 0);
  }
}

TEST_CASE("score_pool strategy semantics") {
  const auto f = clusters(3, 30, 1, 9);
  auto t = train_on_initial(f, 3, 20, 9);
  ScoringContext ctx{&t.ens, &t.pool, &t.cache, 3};
  const auto candidates = t.state.unlabeled();
  const auto conf = score_pool(ctx, candidates, Strategy::confidence, 0, 0);
  const auto ent = score_pool(ctx, candidates, Strategy::entropy, 0, 0);
  const auto marg = score_pool(ctx, candidates, Strategy::heal, 0, 0);
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const auto q = make_query(t.pool.encoding(candidates[j]));
    const auto pred = predict_ensemble(q, t.ens);
    CHECK(conf.pseudo_labels[j] == pred.label);
    CHECK(conf.scores[j] == -*std::max_element(pred.distribution.probs.begin(), pred.distribution.probs.end()));
    CHECK(std::abs(ent.scores[j] - predictive_entropy(pred.distribution)) < 1e-12);
    CHECK(std::abs(marg.scores[j] - margin_score(q, t.ens)) < 1e-9);
    CHECK(marg.scores[j] <= 0.0);
    if (ent.scores[j] == 0.0) CHECK(conf.scores[j] == -1.0);
  }
  const auto naive = score_pool(ctx, candidates, Strategy::margin_naive, 0, 0);
  std::vector<double> s(3);
  member_scores(make_query(t.pool.encoding(candidates[0])), t.ens, 0, PriorMode::none, s);
  CHECK(naive.scores[0] == margin_from_scores(s));
}

TEST_CASE("random scores ignore model state") {
  const auto f = clusters(3, 20, 1, 5);
  auto t = train_on_initial(f, 3, 10, 5);
  ScoringContext ctx{&t.ens, &t.pool, &t.cache, 1};
  const auto candidates = t.state.unlabeled();
  const auto before = select_batch_topk(score_pool(ctx, candidates, Strategy::random, 11, 3), 50);
  fit(t.ens, {&t.pool, &t.cache, t.state.labeled(), t.state.labels()}, 9);
  const auto after = select_batch_topk(score_pool(ctx, candidates, Strategy::random, 11, 3), 50);
  CHECK(before.indices == after.indices);
  const auto other_round = select_batch_topk(score_pool(ctx, candidates, Strategy::random, 11, 4), 50);
  CHECK(other_round.indices != before.indices);
}

TEST_CASE("scoring is independent of worker count") {
  const auto f = clusters(3, 30, 1, 12);
  auto t = train_on_initial(f, 3, 20, 12);
  const auto candidates = t.state.unlabeled();
  ScoringContext one{&t.ens, &t.pool, &t.cache, 1};
  ScoringContext many{&t.ens, &t.pool, &t.cache, 7};
  const auto a = score_pool(one, candidates, Strategy::heal, 0, 0);
  const auto b = score_pool(many, candidates, Strategy::heal, 0, 0);
  CHECK(a.scores == b.scores);
  CHECK(a.pseudo_labels == b.pseudo_labels);
}

TEST_CASE("acquire_step moves a batch and keeps the partition") {
  const auto f = clusters(3, 20, 1, 4);
  auto t = train_on_initial(f, 3, 20, 4);
  ScoringContext ctx{&t.ens, &t.pool, &t.cache, 2};
  SimulatedOracle oracle(f.y);
  AcquisitionConfig cfg;
  cfg.batch_size = 15;
  std::set<std::size_t> seen(t.state.labeled().begin(), t.state.labeled().end());
  while (t.state.unlabeled_count() > 0) {
    const std::size_t before = t.state.labeled().size();
    const std::size_t expect = std::min<std::size_t>(15, t.state.unlabeled_count());
    auto report = acquire_step(t.state, ctx, cfg, oracle);
    CHECK(t.state.labeled().size() == before + expect);
    CHECK(report.round == t.state.round());
    for (std::size_t j = 0; j < report.batch.size(); ++j) {
      CHECK(seen.insert(report.batch.indices[j]).second);
      CHECK(report.labels[j] == f.y[report.batch.indices[j]]);
    }
    CHECK(t.state.labeled().size() + t.state.unlabeled_count() == t.state.size());
  }
  CHECK(seen.size() == f.y.size());
}

TEST_CASE("oracle failure leaves the pool unchanged") {
  const auto f = clusters(3, 20, 1, 4);
  auto t = train_on_initial(f, 3, 20, 4);
  ScoringContext ctx{&t.ens, &t.pool, &t.cache, 2};
  struct Flaky : Oracle {
    std::size_t calls = 0;
    std::size_t label(std::size_t) override {
      if (++calls == 3) throw Error("annotator unavailable");
      return 0;
    }
  } flaky;
  const auto snapshot = t.state;
  CHECK_THROWS_WITH(acquire_step(t.state, ctx, AcquisitionConfig{}, flaky), "annotator unavailable");
  CHECK(t.state == snapshot);
}

TEST_CASE("diversity filter spreads a batch over a duplicated pool") {
  const auto f = clusters(4, 40, 5, 21);
  auto t = train_on_initial(f, 4, 20, 21);
  ScoringContext ctx{&t.ens, &t.pool, &t.cache, 0};
  auto distinct = [&](const AcquisitionBatch& b) {
    std::set<std::size_t> u;
    for (std::size_t i : b.indices) u.insert(f.unique_id[i]);
    return u.size();
  };
  AcquisitionConfig cfg;
  cfg.batch_size = 20;
  cfg.strategy = Strategy::heal;
  const auto plain = propose_batch(ctx, t.state, cfg);
  cfg.strategy = Strategy::heal_diverse;
  const auto diverse = propose_batch(ctx, t.state, cfg);
  CHECK(plain.size() == 20);
  CHECK(diverse.size() == 20);
  CHECK(distinct(plain) <= 8);
  CHECK(distinct(diverse) >= 15);
  CHECK(replay_walk(diverse, t.pool, 4, 0.4));
}
