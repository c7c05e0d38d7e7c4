#include "heal/harness.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <numeric>

#include "heal/checkpoint.hpp"
#include "heal/error.hpp"
#include "heal/parallel.hpp"
#include "json.hpp"

namespace heal {

using nlohmann::json;

std::vector<std::uint64_t> RunConfig::run_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out(repeats);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

void RunConfig::validate() const {
  if (strategies.empty()) throw ConfigError("'strategies' must not be empty");
  if (seeds.empty() && repeats == 0) throw ConfigError("'repeats' must be positive");
  if (duplication_factor == 0) throw ConfigError("'duplication_factor' must be at least 1");
  if (model.members == 0) throw ConfigError("'model.members' must be positive");
  if (model.dim == 0) throw ConfigError("'model.dim' must be positive");
  if (!(model.bandwidth > 0.0)) throw ConfigError("'model.bandwidth' must be positive");
  if (label_budget && *label_budget < n_init) throw ConfigError("'acquisition.label_budget' is below n_init");
  if (parallel_runs == 0) throw ConfigError("'parallel_runs' must be positive");
  AcquisitionConfig{Strategy::heal, batch_size, gamma, n_init, 0}.validate();
  model.train.validate();
}

AcquisitionConfig LearnerSpec::acquisition() const {
  return {strategy, batch_size, gamma, n_init, seed};
}

EnsembleShape LearnerSpec::shape(const Dataset& data) const {
  return {data.classes(), model.dim, strategy == Strategy::margin_naive ? 1 : model.members,
          data.feature_count()};
}

TrainConfig LearnerSpec::train_config() const {
  TrainConfig t = model.train;
  t.seed = seed;
  t.workers = workers;
  if (strategy == Strategy::margin_naive) {
    t.prior_mode = PriorMode::none;
    t.bootstrap = false;
  }
  return t;
}

LearnerSpec learner_spec(const RunConfig& c, Strategy strategy, std::uint64_t seed) {
  LearnerSpec s;
  s.strategy = strategy;
  s.seed = seed;
  s.batch_size = c.batch_size;
  s.n_init = c.n_init;
  s.gamma = c.gamma;
  s.model = c.model;
  s.workers = c.workers;
  s.record_wall_time = c.record_wall_time;
  return s;
}

ActiveLearner::ActiveLearner(const Dataset& data, LearnerSpec spec)
    : data_(&data), spec_(std::move(spec)) {
  data.validate();
  if (data.train.size() < spec_.n_init) throw ConfigError("n_init exceeds the training pool");
  const auto train_x = data.train_features();
  ensemble_ = init_ensemble(spec_.shape(data), spec_.train_config(),
                            fit_normalizer(train_x, spec_.model.bandwidth));
  state_ = PoolState(data.train.size());
  encode_pools();
}

ActiveLearner::ActiveLearner(const Dataset& data, LearnerSpec spec, Ensemble ensemble, PoolState state)
    : data_(&data), spec_(std::move(spec)), ensemble_(std::move(ensemble)), state_(std::move(state)) {
  if (ensemble_.shape != spec_.shape(data)) throw Error("checkpoint does not match the run configuration");
  if (state_.size() != data.train.size()) throw Error("saved pool does not match the dataset");
  ensemble_.config.workers = spec_.workers;
  encode_pools();
}

void ActiveLearner::encode_pools() {
  const std::size_t w = spec_.workers;
  train_pool_ = EncodedPool(data_->train_features(), ensemble_.theta, ensemble_.stats, w);
  test_pool_ = EncodedPool(data_->test_features(), ensemble_.theta, ensemble_.stats, w);
  train_cache_ = build_prior_cache(train_pool_, ensemble_, w);
  test_cache_ = build_prior_cache(test_pool_, ensemble_, w);
  truth_ = data_->train_labels();
  test_truth_ = data_->test_labels();
}

std::vector<std::size_t> ActiveLearner::initial_indices() const {
  return select_initial(pool_size(), spec_.n_init, spec_.seed);
}

AcquisitionBatch ActiveLearner::propose(std::size_t k) {
  auto cfg = spec_.acquisition();
  cfg.batch_size = k;
  ScoringContext ctx{&ensemble_, &train_pool_, &train_cache_, spec_.workers};
  const auto start = std::chrono::steady_clock::now();
  auto batch = propose_batch(ctx, state_, cfg);
  const auto stop = std::chrono::steady_clock::now();
  last_acq_seconds_ = spec_.record_wall_time ? std::chrono::duration<double>(stop - start).count() : 0.0;
  return batch;
}

void ActiveLearner::commit(std::span<const std::size_t> indices, std::span<const std::size_t> labels) {
  for (std::size_t l : labels)
    if (l >= data_->classes()) throw Error("label out of range: " + std::to_string(l));
  const bool first = state_.labeled().empty();
  state_.add_labeled(indices, labels);
  if (!first) state_.advance_round();
  if (first) last_acq_seconds_ = 0.0;
}

CurvePoint ActiveLearner::train_and_evaluate() {
  std::array<PoolBinding, 2> bindings{PoolBinding{&train_pool_, &train_cache_},
                                      PoolBinding{&test_pool_, &test_cache_}};
  fit(ensemble_, {&train_pool_, &train_cache_, state_.labeled(), state_.labels()}, state_.round(),
      bindings);
  const auto predicted = predict_pool(ensemble_, test_pool_, &test_cache_, spec_.workers);
  return {state_.round(), state_.labeled().size(), accuracy(predicted, test_truth_), last_acq_seconds_};
}

bool ActiveLearner::replay(const AcquisitionBatch& batch) const {
  return replay_walk(batch, train_pool_, ensemble_.classes(), spec_.gamma);
}

std::span<const double> ActiveLearner::raw_features(std::size_t pool_index) const {
  return data_->features.row(data_->train.at(pool_index));
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::pending:
      return "pending";
    case RunStatus::incomplete:
      return "incomplete";
    case RunStatus::complete:
      return "complete";
    case RunStatus::failed:
      return "failed";
  }
  return "unknown";
}

bool RunResult::all_complete() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.status == RunStatus::complete; });
}

std::size_t effective_budget(const RunConfig& config, std::size_t pool_size) {
  return std::min(pool_size, config.label_budget.value_or(2000));
}

Dataset load_run_dataset(const RunConfig& config) {
  auto data = load_csv_dataset(config.dataset, config.schema);
  return duplicate_pool(data, config.duplication_factor);
}

namespace {

std::string run_id(Strategy s, std::uint64_t seed) {
  return std::string(to_string(s)) + "-seed" + std::to_string(seed);
}

json batch_trace(const RunRecord& run, std::uint64_t round, const AcquisitionBatch& b, bool replay_ok) {
  json walk = json::array();
  for (const auto& s : b.walk) walk.push_back({s.index, s.pseudo_label, s.similarity, s.admitted});
  return {{"strategy", std::string(to_string(run.strategy))},
          {"seed", run.seed},
          {"round", round},
          {"indices", b.indices},
          {"scores", b.scores},
          {"pseudo_labels", b.pseudo_labels},
          {"skipped", b.skipped},
          {"filled_from_skipped", b.filled_from_skipped},
          {"walk", walk},
          {"replay_ok", replay_ok}};
}

struct RunPaths {
  std::filesystem::path dir, state, curve, batches;
  std::filesystem::path checkpoint(std::uint64_t round) const {
    return dir / ("model-r" + std::to_string(round) + ".ckpt");
  }
};

RunPaths run_paths(const RunConfig& cfg, Strategy s, std::uint64_t seed) {
  const auto id = run_id(s, seed);
  RunPaths p;
  p.dir = cfg.output / "runs" / id;
  p.state = p.dir / "state.json";
  p.batches = p.dir / "batches.jsonl";
  p.curve = cfg.output / "curves" / (id + ".csv");
  return p;
}

class Manifest {
 public:
  Manifest(const RunConfig& cfg, const Dataset& data, std::vector<RunRecord>& runs)
      : cfg_(cfg), data_(data), runs_(runs) {}

  void write() {
    std::lock_guard lock(mu_);
    write_locked();
  }

  // Runs work on private copies of their record and publish them here.
  void publish(std::size_t index, const RunRecord& record) {
    std::lock_guard lock(mu_);
    runs_[index] = record;
    write_locked();
  }

 private:
  void write_locked() {
    json runs = json::array();
    for (const auto& r : runs_) {
      json entry = {{"strategy", std::string(to_string(r.strategy))},
                    {"seed", r.seed},
                    {"status", std::string(to_string(r.status))},
                    {"points", r.curve.points.size()},
                    {"labeled_count", r.curve.points.empty() ? 0 : r.curve.points.back().labeled_count},
                    {"curve", "curves/" + run_id(r.strategy, r.seed) + ".csv"}};
      if (!r.error.empty()) entry["error"] = r.error;
      runs.push_back(entry);
    }
    json doc = {{"name", cfg_.name},
                {"version", HEAL_VERSION},
                {"dataset",
                 {{"name", data_.name},
                  {"rows", data_.size()},
                  {"train", data_.train.size()},
                  {"test", data_.test.size()},
                  {"features", data_.feature_count()},
                  {"classes", data_.classes()}}},
                {"config", json::parse(run_config_to_json(cfg_))},
                {"seeds", cfg_.run_seeds()},
                {"label_budget", effective_budget(cfg_, data_.train.size())},
                {"penalty_rule", kPenaltyRule},
                {"runs", runs}};
    write_file_atomic(cfg_.output / "manifest.json", doc.dump(2) + "\n");
  }

  const RunConfig& cfg_;
  const Dataset& data_;
  std::vector<RunRecord>& runs_;
  std::mutex mu_;
};

void persist(const RunPaths& paths, const RunRecord& run, const ActiveLearner& learner,
             const std::vector<std::string>& trace, std::uint64_t previous_ckpt_round, bool first) {
  const auto round = learner.state().round();
  save_checkpoint(learner.ensemble(), paths.checkpoint(round));
  std::string lines;
  for (const auto& t : trace) lines += t + "\n";
  write_file_atomic(paths.batches, lines);
  write_curve_csv(run.curve, paths.curve);
  json points = json::array();
  for (const auto& p : run.curve.points)
    points.push_back({p.round, p.labeled_count, p.test_accuracy, p.acq_seconds});
  json state = {{"status", std::string(to_string(run.status))},
                {"round", round},
                {"labeled", learner.state().labeled()},
                {"labels", learner.state().labels()},
                {"checkpoint", paths.checkpoint(round).filename().string()},
                {"trace_lines", trace.size()},
                {"points", points}};
  write_file_atomic(paths.state, state.dump() + "\n");
  if (!first && previous_ckpt_round != round) {
    std::error_code ec;
    std::filesystem::remove(paths.checkpoint(previous_ckpt_round), ec);
  }
}

void execute_run(const RunConfig& cfg, const Dataset& data, RunRecord& run, std::size_t index,
                 Manifest& manifest, const RunOptions& options) {
  const auto paths = run_paths(cfg, run.strategy, run.seed);
  std::filesystem::create_directories(paths.dir);
  const auto spec = learner_spec(cfg, run.strategy, run.seed);
  const std::size_t budget = effective_budget(cfg, data.train.size());
  run.curve = LearningCurve{data.name, std::string(to_string(run.strategy)), run.seed, {}};

  std::unique_ptr<ActiveLearner> learner;
  std::vector<std::string> trace;
  bool fresh = true;
  if (options.resume && std::filesystem::exists(paths.state)) {
    const json state = json::parse(read_file(paths.state));
    for (const auto& p : state.at("points"))
      run.curve.points.push_back({p[0].get<std::uint64_t>(), p[1].get<std::size_t>(), p[2].get<double>(),
                                  p[3].get<double>()});
    if (state.at("status") == "complete") {
      run.status = RunStatus::complete;
      manifest.publish(index, run);
      return;
    }
    PoolState pool(data.train.size());
    pool.add_labeled(state.at("labeled").get<std::vector<std::size_t>>(),
                     state.at("labels").get<std::vector<std::size_t>>());
    pool.set_round(state.at("round").get<std::uint64_t>());
    auto ens = load_checkpoint(paths.dir / state.at("checkpoint").get<std::string>());
    learner = std::make_unique<ActiveLearner>(data, spec, std::move(ens), std::move(pool));
    const std::string lines = std::filesystem::exists(paths.batches) ? read_file(paths.batches) : "";
    std::size_t pos = 0;
    while (trace.size() < state.at("trace_lines").get<std::size_t>() && pos < lines.size()) {
      const auto end = lines.find('\n', pos);
      trace.push_back(lines.substr(pos, end - pos));
      pos = end + 1;
    }
    fresh = false;
  }

  SimulatedOracle oracle(std::span<const std::size_t>{});
  std::vector<std::size_t> truth;
  if (fresh) {
    learner = std::make_unique<ActiveLearner>(data, spec);
    truth = learner->truth();
    oracle = SimulatedOracle(truth);
    const auto init = learner->initial_indices();
    std::vector<std::size_t> labels;
    for (std::size_t i : init) labels.push_back(oracle.label(i));
    learner->commit(init, labels);
    run.curve.points.push_back(learner->train_and_evaluate());
    run.status = RunStatus::incomplete;
    persist(paths, run, *learner, trace, 0, true);
    manifest.publish(index, run);
  } else {
    truth = learner->truth();
    oracle = SimulatedOracle(truth);
    run.status = RunStatus::incomplete;
  }

  std::size_t rounds_here = 0;
  while (learner->state().labeled().size() < budget && learner->state().unlabeled_count() > 0) {
    if (options.stop_after_rounds && rounds_here == *options.stop_after_rounds) {
      manifest.publish(index, run);
      return;
    }
    const auto before = learner->state().round();
    const std::size_t k = std::min(cfg.batch_size, budget - learner->state().labeled().size());
    const auto batch = learner->propose(k);
    const bool replay_ok = run.strategy != Strategy::heal_diverse || learner->replay(batch);
    std::vector<std::size_t> labels;
    for (std::size_t i : batch.indices) labels.push_back(oracle.label(i));
    learner->commit(batch.indices, labels);
    trace.push_back(batch_trace(run, learner->state().round(), batch, replay_ok).dump());
    run.curve.points.push_back(learner->train_and_evaluate());
    persist(paths, run, *learner, trace, before, false);
    ++rounds_here;
  }
  run.status = RunStatus::complete;
  persist(paths, run, *learner, trace, learner->state().round(), false);
  manifest.publish(index, run);
}

}  // namespace

RunResult run_learning_curve(const RunConfig& config, const RunOptions& options) {
  config.validate();
  const Dataset data = load_run_dataset(config);
  if (data.train.size() < config.n_init) throw ConfigError("n_init exceeds the training pool");
  std::filesystem::create_directories(config.output / "curves");
  std::filesystem::create_directories(config.output / "runs");

  RunResult result;
  for (Strategy s : config.strategies)
    for (std::uint64_t seed : config.run_seeds()) result.runs.push_back({s, seed, RunStatus::pending, "", {}});
  Manifest manifest(config, data, result.runs);
  manifest.write();

  parallel_for(result.runs.size(), config.parallel_runs, [&](std::size_t i) {
    RunRecord run = result.runs[i];
    try {
      execute_run(config, data, run, i, manifest, options);
    } catch (const std::exception& e) {
      run.status = RunStatus::failed;
      run.error = e.what();
      manifest.publish(i, run);
    }
  });

  if (result.all_complete() && config.strategies.size() > 1) {
    std::vector<LearningCurve> curves;
    for (const auto& r : result.runs) curves.push_back(r.curve);
    try {
      write_file_atomic(config.output / "pairwise.csv", format_matrix_csv(pairwise_matrix(curves)));
    } catch (const Error&) {
      // Curves with different checkpoints (e.g. an exhausted pool) have no matrix.
    }
  }
  return result;
}

std::vector<LearningCurve> import_curves(const std::filesystem::path& output_dir) {
  const json manifest = json::parse(read_file(output_dir / "manifest.json"));
  const std::string dataset = manifest.at("dataset").at("name");
  std::vector<LearningCurve> out;
  for (const auto& r : manifest.at("runs")) {
    const auto path = output_dir / r.at("curve").get<std::string>();
    if (std::filesystem::exists(path)) out.push_back(read_curve_csv(path, dataset));
  }
  return out;
}

}  // namespace heal
