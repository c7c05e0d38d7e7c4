#include <set>
#include <type_traits>

#include "heal/checkpoint.hpp"
#include "heal/error.hpp"
#include "heal/harness.hpp"
#include "json.hpp"

namespace heal {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects any key it was not asked for.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("'" + label() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
      if (!it->is_number_unsigned()) throw ConfigError("invalid value for '" + child(key) + "'");
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("invalid value for '" + child(key) + "'");
    }
  }

  const json* object(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown key '" + child(it.key().c_str()) + "'");
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  Fields top(doc, "");
  top.get("name", cfg.name);

  if (const json* ds = top.object("dataset")) {
    Fields f(*ds, "dataset");
    std::string path;
    f.get("path", path);
    if (path.empty()) throw ConfigError("missing key 'dataset.path'");
    cfg.dataset = resolve(base_dir, path);
    f.get("label_column", cfg.schema.label_column);
    std::string split;
    f.get("split_column", split);
    if (!split.empty()) cfg.schema.split_column = split;
    f.get("test_fraction", cfg.schema.test_fraction);
    f.get("split_seed", cfg.schema.split_seed);
    f.finish();
  } else {
    throw ConfigError("missing key 'dataset'");
  }

  std::vector<std::string> strategies;
  top.get("strategies", strategies);
  if (!strategies.empty()) {
    cfg.strategies.clear();
    for (const auto& s : strategies) cfg.strategies.push_back(parse_strategy(s));
  }
  top.get("seeds", cfg.seeds);
  top.get("repeats", cfg.repeats);

  if (const json* acq = top.object("acquisition")) {
    Fields f(*acq, "acquisition");
    f.get("batch_size", cfg.batch_size);
    f.get("n_init", cfg.n_init);
    f.get("gamma", cfg.gamma);
    std::size_t budget = 0;
    f.get("label_budget", budget);
    if (budget > 0) cfg.label_budget = budget;
    f.finish();
  }

  if (const json* model = top.object("model")) {
    Fields f(*model, "model");
    auto& m = cfg.model;
    f.get("members", m.members);
    f.get("dim", m.dim);
    f.get("bandwidth", m.bandwidth);
    std::string mode;
    f.get("prior_mode", mode);
    if (!mode.empty()) m.train.prior_mode = parse_prior_mode(mode);
    f.get("learning_rate", m.train.learning_rate);
    f.get("max_epochs", m.train.max_epochs);
    f.get("target_train_accuracy", m.train.target_train_accuracy);
    f.get("bootstrap", m.train.bootstrap);
    f.get("regen_fraction", m.train.regen_fraction);
    f.get("regen_interval", m.train.regen_interval);
    f.finish();
  }

  top.get("duplication_factor", cfg.duplication_factor);
  top.get("workers", cfg.workers);
  top.get("parallel_runs", cfg.parallel_runs);
  top.get("record_wall_time", cfg.record_wall_time);
  std::string output;
  top.get("output", output);
  if (!output.empty()) cfg.output = resolve(base_dir, output);
  top.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

std::string run_config_to_json(const RunConfig& c) {
  json strategies = json::array();
  for (Strategy s : c.strategies) strategies.push_back(std::string(to_string(s)));
  json dataset = {{"path", c.dataset.string()},
                  {"label_column", c.schema.label_column},
                  {"split_column", c.schema.split_column ? json(*c.schema.split_column) : json(nullptr)},
                  {"test_fraction", c.schema.test_fraction},
                  {"split_seed", c.schema.split_seed}};
  const auto& t = c.model.train;
  json model = {{"members", c.model.members},
                {"dim", c.model.dim},
                {"bandwidth", c.model.bandwidth},
                {"prior_mode", std::string(to_string(t.prior_mode))},
                {"learning_rate", t.learning_rate},
                {"max_epochs", t.max_epochs},
                {"target_train_accuracy", t.target_train_accuracy},
                {"bootstrap", t.bootstrap},
                {"regen_fraction", t.regen_fraction},
                {"regen_interval", t.regen_interval}};
  json acq = {{"batch_size", c.batch_size},
              {"n_init", c.n_init},
              {"gamma", c.gamma},
              {"label_budget", c.label_budget ? json(*c.label_budget) : json(nullptr)}};
  json doc = {{"name", c.name},
              {"dataset", dataset},
              {"strategies", strategies},
              {"seeds", c.seeds},
              {"repeats", c.repeats},
              {"acquisition", acq},
              {"model", model},
              {"duplication_factor", c.duplication_factor},
              {"workers", c.workers},
              {"parallel_runs", c.parallel_runs},
              {"record_wall_time", c.record_wall_time},
              {"output", c.output.string()}};
  return doc.dump(2);
}

EntropyHistConfig parse_entropy_hist_config(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  EntropyHistConfig cfg;
  auto& x = cfg.experiment;
  Fields top(doc, "");
  top.get("seeds", cfg.seeds);
  top.get("members", x.members);
  top.get("dim", x.dim);
  top.get("bins", x.bins);
  top.get("bandwidth", x.bandwidth);
  top.get("workers", x.workers);
  if (const json* t = top.object("train")) {
    Fields f(*t, "train");
    f.get("learning_rate", x.train.learning_rate);
    f.get("max_epochs", x.train.max_epochs);
    f.get("target_train_accuracy", x.train.target_train_accuracy);
    f.get("bootstrap", x.train.bootstrap);
    f.finish();
  }
  if (const json* d = top.object("data")) {
    Fields f(*d, "data");
    f.get("classes", x.data.classes);
    f.get("features", x.data.features);
    f.get("sigma", x.data.sigma);
    f.get("mean_scale", x.data.mean_scale);
    f.get("train_per_class", x.data.train_per_class);
    f.get("test_per_class", x.data.test_per_class);
    f.get("min_separation", x.data.min_separation);
    f.finish();
  }
  std::string output;
  top.get("output", output);
  if (!output.empty()) cfg.output = resolve(base_dir, output);
  top.finish();
  if (cfg.seeds.empty()) throw ConfigError("'seeds' must not be empty");
  if (x.members == 0 || x.dim == 0 || x.bins == 0) throw ConfigError("'members', 'dim' and 'bins' must be positive");
  if (!(x.bandwidth > 0.0)) throw ConfigError("'bandwidth' must be positive");
  x.train.validate();
  return cfg;
}

EntropyHistConfig load_entropy_hist_config(const std::filesystem::path& path) {
  return parse_entropy_hist_config(read_file(path), path.parent_path());
}

}  // namespace heal
