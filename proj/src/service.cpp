#include "heal/service.hpp"

#include <algorithm>
#include <iostream>
#include <random>
#include <set>

#include "heal/checkpoint.hpp"
#include "heal/harness.hpp"
#include "httplib.h"
#include "json.hpp"

namespace heal {

using nlohmann::json;
namespace fs = std::filesystem;

enum class Phase { awaiting_labels, training, idle, finished };

namespace {

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::awaiting_labels: return "awaiting_labels";
    case Phase::training: return "training";
    case Phase::idle: return "idle";
    case Phase::finished: return "finished";
  }
  return "unknown";
}

Phase parse_phase(const std::string& s) {
  for (Phase p : {Phase::awaiting_labels, Phase::training, Phase::idle, Phase::finished})
    if (to_string(p) == s) return p;
  throw Error("unknown session status '" + s + "'");
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error&) {
    throw ApiError(422, "request body is not valid JSON");
  }
}

// Session request keys onto the run configuration schema.
json session_to_run_config(const json& body) {
  if (!body.is_object()) throw ApiError(422, "request body must be a JSON object");
  json cfg = {{"dataset", json::object()}, {"acquisition", json::object()}, {"seeds", {0}}};
  for (const auto& [key, value] : body.items()) {
    if (key == "dataset_ref") {
      cfg["dataset"]["path"] = value;
    } else if (key == "label_column" || key == "split_column" || key == "test_fraction" ||
               key == "split_seed") {
      cfg["dataset"][key] = value;
    } else if (key == "strategy") {
      cfg["strategies"] = json::array({value});
    } else if (key == "seed") {
      cfg["seeds"] = json::array({value});
    } else if (key == "K") {
      cfg["acquisition"]["batch_size"] = value;
    } else if (key == "n_init" || key == "gamma" || key == "label_budget") {
      cfg["acquisition"][key] = value;
    } else if (key == "ensemble") {
      cfg["model"] = value;
    } else if (key == "duplication_factor" || key == "record_wall_time") {
      cfg[key] = value;
    } else {
      throw ApiError(422, "unknown key '" + key + "'");
    }
  }
  if (!body.contains("dataset_ref")) throw ApiError(422, "missing key 'dataset_ref'");
  if (!body.at("dataset_ref").is_string()) throw ApiError(422, "invalid value for 'dataset_ref'");
  return cfg;
}

std::string rename_keys(std::string message) {
  const std::pair<std::string_view, std::string_view> names[] = {
      {"'acquisition.batch_size'", "'K'"}, {"'acquisition.", "'"}, {"'model.", "'ensemble."},
      {"'strategies'", "'strategy'"},     {"'seeds'", "'seed'"},  {"'dataset.path'", "'dataset_ref'"},
      {"'dataset.", "'"}};
  for (const auto& [from, to] : names)
    for (auto pos = message.find(from); pos != std::string::npos; pos = message.find(from, pos + to.size()))
      message.replace(pos, from.size(), to);
  return message;
}

std::string new_session_id() {
  std::random_device rd;
  const std::uint64_t v = (std::uint64_t{rd()} << 32) ^ rd();
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[i] = hex[(v >> (60 - 4 * i)) & 0xf];
  return out;
}

}  // namespace

struct PendingBatch {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
  std::vector<std::size_t> pseudo_labels;
  bool initial = false;
  double acq_seconds = 0.0;
};

class Session {
 public:
  std::mutex mu;
  std::string id;
  fs::path dir;
  RunConfig config;
  Strategy strategy = Strategy::heal;
  std::uint64_t seed = 0;
  std::shared_ptr<const Dataset> data;
  std::unique_ptr<ActiveLearner> learner;
  Phase phase = Phase::awaiting_labels;
  std::optional<PendingBatch> pending;
  std::map<std::size_t, std::size_t> received;
  LearningCurve curve;
  std::uint64_t committed = 0;  // batches folded into the labeled set
  std::uint64_t ckpt = 0;       // `committed` value of the saved checkpoint

  std::size_t budget() const { return effective_budget(config, learner->pool_size()); }
  std::uint64_t round() const { return committed + (phase == Phase::finished ? 0 : 1); }
  fs::path checkpoint_path(std::uint64_t c) const { return dir / ("model-c" + std::to_string(c) + ".ckpt"); }

  void persist() const {
    json pend = nullptr;
    if (pending)
      pend = {{"indices", pending->indices},
              {"scores", pending->scores},
              {"pseudo_labels", pending->pseudo_labels},
              {"initial", pending->initial},
              {"acq_seconds", pending->acq_seconds}};
    json recv = json::array();
    for (const auto& [i, l] : received) recv.push_back({i, l});
    json points = json::array();
    for (const auto& p : curve.points) points.push_back({p.round, p.labeled_count, p.test_accuracy, p.acq_seconds});
    json doc = {{"id", id},
                {"config", json::parse(run_config_to_json(config))},
                {"strategy", std::string(to_string(strategy))},
                {"seed", seed},
                {"status", std::string(to_string(phase))},
                {"committed", committed},
                {"pool_round", learner->state().round()},
                {"labeled", learner->state().labeled()},
                {"labels", learner->state().labels()},
                {"checkpoint", checkpoint_path(ckpt).filename().string()},
                {"pending", pend},
                {"received", recv},
                {"points", points}};
    write_file_atomic(dir / "session.json", doc.dump() + "\n");
  }

  // Retrain on the committed labels and move to idle or finished.
  void train() {
    curve.points.push_back(learner->train_and_evaluate());
    const auto previous = ckpt;
    save_checkpoint(learner->ensemble(), checkpoint_path(committed));
    ckpt = committed;
    const bool done = learner->state().labeled().size() >= budget() || learner->state().unlabeled_count() == 0;
    phase = done ? Phase::finished : Phase::idle;
    persist();
    if (previous != ckpt) {
      std::error_code ec;
      fs::remove(checkpoint_path(previous), ec);
    }
  }

  json batch_json() const {
    json samples = json::array();
    for (std::size_t j = 0; j < pending->indices.size(); ++j) {
      const auto raw = learner->raw_features(pending->indices[j]);
      json s = {{"index", pending->indices[j]}, {"features", std::vector<double>(raw.begin(), raw.end())}};
      if (pending->initial) {
        s["pseudo_label"] = nullptr;
        s["score"] = nullptr;
      } else {
        s["pseudo_label"] = pending->pseudo_labels[j];
        s["score"] = pending->scores[j];
      }
      s["labeled"] = received.contains(pending->indices[j]);
      samples.push_back(std::move(s));
    }
    return {{"session_id", id},
            {"round", round()},
            {"initial", pending->initial},
            {"classes", data->class_names},
            {"feature_names", data->feature_names},
            {"samples", samples}};
  }

  json status_json() const {
    json acc = nullptr;
    if (!curve.points.empty()) acc = curve.points.back().test_accuracy;
    return {{"session_id", id},
            {"status", std::string(to_string(phase))},
            {"round", round()},
            {"labeled_count", learner->state().labeled().size()},
            {"latest_test_accuracy", acc},
            {"pending", pending ? pending->indices.size() : 0},
            {"remaining", pending ? pending->indices.size() - received.size() : 0},
            {"label_budget", budget()},
            {"strategy", std::string(to_string(strategy))}};
  }
};

SessionStore::SessionStore(ServiceOptions options) : options_(std::move(options)) {
  options_.data_root = fs::absolute(options_.data_root);
  std::error_code ec;
  fs::create_directories(options_.state_dir / "sessions", ec);
  if (ec) throw Error("cannot create state directory " + options_.state_dir.string() + ": " + ec.message());
  try {
    write_file_atomic(options_.state_dir / ".probe", "ok\n");
    fs::remove(options_.state_dir / ".probe");
  } catch (const std::exception& e) {
    throw Error("state directory " + options_.state_dir.string() + " is not writable: " + e.what());
  }

  for (const auto& entry : fs::directory_iterator(options_.state_dir / "sessions")) {
    const auto file = entry.path() / "session.json";
    if (!fs::exists(file)) continue;
    try {
      const json doc = json::parse(read_file(file));
      auto s = std::make_shared<Session>();
      s->id = doc.at("id").get<std::string>();
      s->dir = entry.path();
      s->config = parse_run_config(doc.at("config").dump());
      s->config.workers = options_.workers;
      s->strategy = parse_strategy(doc.at("strategy").get<std::string>());
      s->seed = doc.at("seed").get<std::uint64_t>();
      s->data = dataset(s->config);
      s->phase = parse_phase(doc.at("status").get<std::string>());
      s->committed = doc.at("committed").get<std::uint64_t>();
      const auto ckpt_name = doc.at("checkpoint").get<std::string>();
      s->ckpt = std::stoull(ckpt_name.substr(7));

      PoolState pool(s->data->train.size());
      pool.add_labeled(doc.at("labeled").get<std::vector<std::size_t>>(),
                       doc.at("labels").get<std::vector<std::size_t>>());
      pool.set_round(doc.at("pool_round").get<std::uint64_t>());
      s->learner = std::make_unique<ActiveLearner>(*s->data, learner_spec(s->config, s->strategy, s->seed),
                                                   load_checkpoint(s->dir / ckpt_name), std::move(pool));
      if (const auto& p = doc.at("pending"); !p.is_null()) {
        PendingBatch b;
        b.indices = p.at("indices").get<std::vector<std::size_t>>();
        b.scores = p.at("scores").get<std::vector<double>>();
        b.pseudo_labels = p.at("pseudo_labels").get<std::vector<std::size_t>>();
        b.initial = p.at("initial").get<bool>();
        b.acq_seconds = p.at("acq_seconds").get<double>();
        s->learner->set_last_acquisition_seconds(b.acq_seconds);
        s->pending = std::move(b);
      }
      for (const auto& r : doc.at("received")) s->received[r[0].get<std::size_t>()] = r[1].get<std::size_t>();
      s->curve = LearningCurve{s->data->name, std::string(to_string(s->strategy)), s->seed, {}};
      for (const auto& p : doc.at("points"))
        s->curve.points.push_back({p[0].get<std::uint64_t>(), p[1].get<std::size_t>(), p[2].get<double>(),
                                   p[3].get<double>()});
      // Labels were committed but the retrain did not finish.
      if (s->phase == Phase::training) s->train();
      sessions_[s->id] = std::move(s);
    } catch (const std::exception& e) {
      std::cerr << "skipping session " << entry.path().filename().string() << ": " << e.what() << "\n";
    }
  }
}

SessionStore::~SessionStore() = default;

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::shared_ptr<const Dataset> SessionStore::dataset(const RunConfig& config) {
  const json key = {config.dataset.string(), config.schema.label_column, config.schema.split_column.value_or(""),
                    config.schema.test_fraction, config.schema.split_seed, config.duplication_factor};
  std::lock_guard lock(mu_);
  auto& slot = datasets_[key.dump()];
  if (!slot) slot = std::make_shared<const Dataset>(load_run_dataset(config));
  return slot;
}

std::shared_ptr<Session> SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "unknown session '" + id + "'");
  return it->second;
}

std::string SessionStore::create(const std::string& body) {
  const json request = parse_body(body);
  auto s = std::make_shared<Session>();
  try {
    s->config = parse_run_config(session_to_run_config(request).dump(), options_.data_root);
    if (s->config.batch_size > kMaxBatchSize)
      throw ConfigError("'K' must be at most " + std::to_string(kMaxBatchSize));
    s->config.workers = options_.workers;
    s->strategy = s->config.strategies.front();
    s->seed = s->config.run_seeds().front();
    s->data = dataset(s->config);
    s->learner = std::make_unique<ActiveLearner>(*s->data, learner_spec(s->config, s->strategy, s->seed));
  } catch (const ApiError&) {
    throw;
  } catch (const std::exception& e) {
    throw ApiError(422, rename_keys(e.what()));
  }
  s->curve = LearningCurve{s->data->name, std::string(to_string(s->strategy)), s->seed, {}};
  PendingBatch initial;
  initial.indices = s->learner->initial_indices();
  initial.initial = true;
  s->pending = std::move(initial);
  s->phase = Phase::awaiting_labels;

  std::lock_guard lock(mu_);
  do s->id = new_session_id();
  while (sessions_.contains(s->id) || fs::exists(options_.state_dir / "sessions" / s->id));
  s->dir = options_.state_dir / "sessions" / s->id;
  fs::create_directories(s->dir);
  save_checkpoint(s->learner->ensemble(), s->checkpoint_path(0));
  s->persist();
  sessions_[s->id] = s;
  json out = s->status_json();
  out["classes"] = s->data->class_names;
  out["pool_size"] = s->learner->pool_size();
  return out.dump();
}

std::string SessionStore::batch(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->phase == Phase::finished) throw ApiError(409, "session is finished");
  if (s->phase == Phase::idle) {
    const auto labeled = s->learner->state().labeled().size();
    const auto k = std::min(s->config.batch_size, s->budget() - labeled);
    const auto b = s->learner->propose(k);
    PendingBatch p;
    p.indices = b.indices;
    p.scores = b.scores;
    p.pseudo_labels = b.pseudo_labels;
    p.acq_seconds = s->learner->last_acquisition_seconds();
    s->pending = std::move(p);
    s->received.clear();
    s->phase = Phase::awaiting_labels;
    s->persist();
  }
  return s->batch_json().dump();
}

std::string SessionStore::submit_labels(const std::string& id, const std::string& body) {
  auto s = find(id);
  const json request = parse_body(body);
  std::lock_guard lock(s->mu);
  if (!request.is_object() || !request.contains("labels") || !request.at("labels").is_array())
    throw ApiError(422, "body must be an object with a 'labels' array");
  for (const auto& [key, value] : request.items())
    if (key != "labels") throw ApiError(422, "unknown key '" + key + "'");

  const auto& classes = s->data->class_names;
  std::map<std::size_t, std::size_t> incoming;
  for (const auto& entry : request.at("labels")) {
    if (!entry.is_object() || !entry.contains("index") || !entry.contains("label"))
      throw ApiError(422, "each label needs 'index' and 'label'");
    if (!entry.at("index").is_number_unsigned()) throw ApiError(422, "'index' must be a non-negative integer");
    const auto index = entry.at("index").get<std::size_t>();
    const auto& lv = entry.at("label");
    std::size_t label = 0;
    if (lv.is_number_unsigned()) {
      label = lv.get<std::size_t>();
      if (label >= classes.size()) throw ApiError(422, "label " + std::to_string(label) + " is out of range");
    } else if (lv.is_string()) {
      auto it = std::find(classes.begin(), classes.end(), lv.get<std::string>());
      if (it == classes.end()) throw ApiError(422, "unknown class '" + lv.get<std::string>() + "'");
      label = static_cast<std::size_t>(it - classes.begin());
    } else {
      throw ApiError(422, "'label' must be a class index or name");
    }
    if (auto [it, fresh] = incoming.emplace(index, label); !fresh && it->second != label)
      throw ApiError(422, "conflicting labels for index " + std::to_string(index));
  }
  if (s->phase != Phase::awaiting_labels || !s->pending)
    throw ApiError(409, "no pending batch; request one first");
  const std::set<std::size_t> pending(s->pending->indices.begin(), s->pending->indices.end());
  for (const auto& [index, label] : incoming)
    if (!pending.contains(index)) throw ApiError(409, "index " + std::to_string(index) + " is not pending");

  for (const auto& [index, label] : incoming) s->received[index] = label;
  const std::size_t remaining = s->pending->indices.size() - s->received.size();
  if (remaining > 0) {
    s->persist();
  } else {
    std::vector<std::size_t> labels;
    for (std::size_t i : s->pending->indices) labels.push_back(s->received.at(i));
    s->learner->set_last_acquisition_seconds(s->pending->acq_seconds);
    s->learner->commit(s->pending->indices, labels);
    ++s->committed;
    s->pending.reset();
    s->received.clear();
    s->phase = Phase::training;
    s->persist();
    s->train();
  }
  json out = s->status_json();
  out["accepted"] = incoming.size();
  out["remaining"] = remaining;
  return out.dump();
}

std::string SessionStore::status(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->status_json().dump();
}

std::string SessionStore::curve(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  json rows = json::array();
  for (const auto& p : s->curve.points)
    rows.push_back({{"round", p.round},
                    {"labeled_count", p.labeled_count},
                    {"test_accuracy", p.test_accuracy},
                    {"acq_seconds", p.acq_seconds}});
  return json{{"dataset", s->curve.dataset},
              {"strategy", s->curve.strategy},
              {"seed", s->curve.seed},
              {"rows", rows}}
      .dump();
}

std::string SessionStore::curve_csv(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return format_curve_csv(s->curve);
}

std::string SessionStore::strategies() const {
  json names = json::array();
  for (Strategy st : all_strategies()) names.push_back(std::string(to_string(st)));
  return json{{"strategies", names},
              {"default", "heal"},
              {"prior_modes", {"isolated", "combined", "none"}},
              {"K", {{"min", 1}, {"max", kMaxBatchSize}}}}
      .dump();
}

struct HttpServer::Impl {
  SessionStore& store;
  httplib::Server server;
};

namespace {

template <class F>
httplib::Server::Handler wrap(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ApiError& e) {
      res.status = e.status();
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  };
}

}  // namespace

HttpServer::HttpServer(SessionStore& store) : impl_(new Impl{store, {}}) {
  auto& srv = impl_->server;
  auto& st = impl_->store;
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  auto reply = [](httplib::Response& res, const std::string& body, int status = 200) {
    res.status = status;
    res.set_content(body, "application/json");
  };
  srv.Post("/sessions", wrap([&st, reply](const auto& req, auto& res) { reply(res, st.create(req.body), 201); }));
  srv.Get(R"(/sessions/([^/]+)/batch)",
          wrap([&st, reply](const auto& req, auto& res) { reply(res, st.batch(req.matches[1])); }));
  srv.Post(R"(/sessions/([^/]+)/labels)", wrap([&st, reply](const auto& req, auto& res) {
             reply(res, st.submit_labels(req.matches[1], req.body));
           }));
  srv.Get(R"(/sessions/([^/]+)/status)",
          wrap([&st, reply](const auto& req, auto& res) { reply(res, st.status(req.matches[1])); }));
  srv.Get(R"(/sessions/([^/]+)/curve)", wrap([&st, reply](const auto& req, auto& res) {
            if (req.get_param_value("format") == "csv")
              res.set_content(st.curve_csv(req.matches[1]), "text/csv");
            else
              reply(res, st.curve(req.matches[1]));
          }));
  srv.Get("/strategies", wrap([&st, reply](const auto&, auto& res) { reply(res, st.strategies()); }));
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int bound = srv.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!srv.bind_to_port(host, port))
    throw Error("cannot bind " + host + ":" + std::to_string(port) + " (address in use or not permitted)");
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace heal
