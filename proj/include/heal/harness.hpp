#pragma once

// Learning-curve experiments: run configuration, the per-run active
// learning engine, and the resumable multi-run driver.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "heal/acquisition.hpp"
#include "heal/dataset.hpp"
#include "heal/metrics.hpp"

namespace heal {

struct ModelConfig {
  std::size_t members = 8;
  std::size_t dim = 2000;
  double bandwidth = 1.0;
  TrainConfig train;  // seed is replaced by the run seed
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct RunConfig {
  std::string name = "run";
  std::filesystem::path dataset;
  CsvSchema schema;
  std::vector<Strategy> strategies{Strategy::random, Strategy::heal};
  std::vector<std::uint64_t> seeds;  // empty: 0 .. repeats-1
  std::size_t repeats = 5;
  std::size_t batch_size = 20;
  std::size_t n_init = 20;
  double gamma = 0.4;
  std::optional<std::size_t> label_budget;  // default min(pool, 2000)
  std::size_t duplication_factor = 1;
  ModelConfig model;
  std::size_t workers = 0;        // threads inside one run
  std::size_t parallel_runs = 1;  // runs executed concurrently
  bool record_wall_time = true;
  std::filesystem::path output = "results";

  std::vector<std::uint64_t> run_seeds() const;
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// JSON run configuration. Unknown keys are rejected with their dotted path.
// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

// Everything one active-learning run needs besides the dataset.
struct LearnerSpec {
  Strategy strategy = Strategy::heal;
  std::uint64_t seed = 0;
  std::size_t batch_size = 20;
  std::size_t n_init = 20;
  double gamma = 0.4;
  ModelConfig model;
  std::size_t workers = 0;
  bool record_wall_time = true;

  AcquisitionConfig acquisition() const;
  // Model actually trained for this strategy (margin_naive uses one plain model).
  EnsembleShape shape(const Dataset& data) const;
  TrainConfig train_config() const;
};

LearnerSpec learner_spec(const RunConfig& config, Strategy strategy, std::uint64_t seed);

// One labeled pool evolving round by round. Pool indices are positions in
// the dataset's train split.
class ActiveLearner {
 public:
  ActiveLearner(const Dataset& data, LearnerSpec spec);
  // Resume from persisted state. The encoder and caches are rebuilt from
  // the checkpointed ensemble.
  ActiveLearner(const Dataset& data, LearnerSpec spec, Ensemble ensemble, PoolState state);

  const Dataset& data() const { return *data_; }
  const LearnerSpec& spec() const { return spec_; }
  const Ensemble& ensemble() const { return ensemble_; }
  const PoolState& state() const { return state_; }
  const EncodedPool& train_pool() const { return train_pool_; }
  const std::vector<std::size_t>& truth() const { return truth_; }
  std::size_t pool_size() const { return train_pool_.size(); }

  std::vector<std::size_t> initial_indices() const;
  // Scores the unlabeled pool and selects up to k samples.
  AcquisitionBatch propose(std::size_t k);
  double last_acquisition_seconds() const { return last_acq_seconds_; }
  void set_last_acquisition_seconds(double s) { last_acq_seconds_ = s; }
  // Adds labels; every commit after the first advances the round.
  void commit(std::span<const std::size_t> indices, std::span<const std::size_t> labels);
  // Retrains from scratch on the labeled set and evaluates on the test split.
  CurvePoint train_and_evaluate();
  bool replay(const AcquisitionBatch& batch) const;
  std::span<const double> raw_features(std::size_t pool_index) const;

 private:
  void encode_pools();

  const Dataset* data_;
  LearnerSpec spec_;
  Ensemble ensemble_;
  PoolState state_;
  EncodedPool train_pool_, test_pool_;
  PriorSimilarityCache train_cache_, test_cache_;
  std::vector<std::size_t> truth_, test_truth_;
  double last_acq_seconds_ = 0.0;
};

enum class RunStatus { pending, incomplete, complete, failed };
std::string_view to_string(RunStatus s);

struct RunRecord {
  Strategy strategy = Strategy::heal;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::pending;
  std::string error;
  LearningCurve curve;
};

struct RunOptions {
  bool resume = false;
  // Stop every run after this many acquisition rounds in this invocation,
  // leaving it incomplete (used to exercise resume).
  std::optional<std::size_t> stop_after_rounds;
};

struct RunResult {
  std::vector<RunRecord> runs;
  bool all_complete() const;
};

// Output layout under config.output:
//   manifest.json, curves/<strategy>-seed<seed>.csv, pairwise.csv,
//   runs/<strategy>-seed<seed>/{state.json, model-r<round>.ckpt, batches.jsonl}
RunResult run_learning_curve(const RunConfig& config, const RunOptions& options = {});

// Loads the curves listed in a run directory's manifest.
std::vector<LearningCurve> import_curves(const std::filesystem::path& output_dir);

std::size_t effective_budget(const RunConfig& config, std::size_t pool_size);
Dataset load_run_dataset(const RunConfig& config);

// Entropy histogram experiment on the synthetic OOD fixture, one table per
// seed and prior mode.
struct EntropyHistConfig {
  std::vector<std::uint64_t> seeds{0};
  OodExperimentConfig experiment;
  std::optional<std::filesystem::path> output;
};

EntropyHistConfig parse_entropy_hist_config(std::string_view text, const std::filesystem::path& base_dir = {});
EntropyHistConfig load_entropy_hist_config(const std::filesystem::path& path);

}  // namespace heal
