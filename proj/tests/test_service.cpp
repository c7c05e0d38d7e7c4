#include <atomic>
#include <filesystem>
#include <set>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "heal/checkpoint.hpp"
#include "heal/harness.hpp"
#include "heal/service.hpp"
#include "httplib.h"
#include "json.hpp"
#include "test_support.hpp"

using namespace heal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path root;
  fs::path state;
  Dataset data;

  explicit Fixture(const std::string& name) {
    root = fs::temp_directory_path() / ("heal_service_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    state = root / "state";
    std::ofstream(root / "pool.csv") << heal::test::cluster_csv(67, 11);
    data = load_csv_dataset(root / "pool.csv", {});
  }

  ServiceOptions options() const { return {state, root, 2}; }

  std::size_t truth(std::size_t pool_index) const { return data.labels[data.train[pool_index]]; }

  json labels_for(const json& batch, std::size_t count = SIZE_MAX) const {
    json labels = json::array();
    for (const auto& s : batch["samples"]) {
      if (labels.size() == count) break;
      const auto idx = s["index"].get<std::size_t>();
      labels.push_back({{"index", idx}, {"label", truth(idx)}});
    }
    return {{"labels", labels}};
  }
};

const char* kSessionBody = R"({"dataset_ref": "pool.csv", "strategy": "heal", "K": 10, "n_init": 10,
  "seed": 3, "label_budget": 40, "record_wall_time": false,
  "ensemble": {"members": 4, "dim": 256, "bandwidth": 0.8}})";

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ApiError& e) {
    return e.status();
  }
  return 200;
}

}  // namespace

TEST_CASE("session state machine walk") {
  Fixture fx("walk");
  SessionStore store(fx.options());
  const auto created = json::parse(store.create(kSessionBody));
  const std::string id = created["session_id"];
  CHECK(created["status"] == "awaiting_labels");
  CHECK(created["round"] == 1);
  CHECK(created["classes"] == json({"alpha", "beta", "gamma"}));

  auto batch = json::parse(store.batch(id));
  CHECK(batch["round"] == 1);
  CHECK(batch["initial"] == true);
  REQUIRE(batch["samples"].size() == 10);
  // Raw feature values in original units.
  const auto first = batch["samples"][0]["index"].get<std::size_t>();
  const auto raw = fx.data.features.row(fx.data.train[first]);
  CHECK(batch["samples"][0]["features"].get<std::vector<double>>() == std::vector<double>(raw.begin(), raw.end()));
  // Asking again returns the same pending batch.
  CHECK(json::parse(store.batch(id)) == batch);

  auto ack = json::parse(store.submit_labels(id, fx.labels_for(batch).dump()));
  CHECK(ack["accepted"] == 10);
  CHECK(ack["remaining"] == 0);
  auto st = json::parse(store.status(id));
  CHECK(st["status"] == "idle");
  CHECK(st["round"] == 2);
  CHECK(st["labeled_count"] == 10);
  CHECK(st["latest_test_accuracy"].is_number());

  batch = json::parse(store.batch(id));
  CHECK(batch["round"] == 2);
  CHECK(batch["initial"] == false);
  REQUIRE(batch["samples"].size() == 10);
  for (const auto& s : batch["samples"]) {
    CHECK(s["pseudo_label"].is_number_unsigned());
    CHECK(s["score"].get<double>() <= 0.0);
  }
  CHECK(json::parse(store.status(id))["status"] == "awaiting_labels");

  // Partial labels keep the batch pending; class names are accepted too.
  json partial = fx.labels_for(batch, 4);
  partial["labels"][0]["label"] = fx.data.class_names[partial["labels"][0]["label"].get<std::size_t>()];
  ack = json::parse(store.submit_labels(id, partial.dump()));
  CHECK(ack["accepted"] == 4);
  CHECK(ack["remaining"] == 6);
  CHECK(json::parse(store.status(id))["status"] == "awaiting_labels");
  ack = json::parse(store.submit_labels(id, fx.labels_for(batch).dump()));
  CHECK(ack["remaining"] == 0);
  st = json::parse(store.status(id));
  CHECK(st["round"] == 3);
  CHECK(st["labeled_count"] == 20);

  for (int r = 0; r < 2; ++r) store.submit_labels(id, fx.labels_for(json::parse(store.batch(id))).dump());
  st = json::parse(store.status(id));
  CHECK(st["status"] == "finished");
  CHECK(st["labeled_count"] == 40);
  CHECK(status_of([&] { store.batch(id); }) == 409);
  CHECK(json::parse(store.curve(id))["rows"].size() == 4);
}

TEST_CASE("session request errors") {
  Fixture fx("errors");
  SessionStore store(fx.options());
  const std::string id = json::parse(store.create(kSessionBody))["session_id"];
  const auto batch = json::parse(store.batch(id));

  CHECK(status_of([&] { store.status("nope"); }) == 404);
  CHECK(status_of([&] { store.batch("nope"); }) == 404);
  CHECK(status_of([&] { store.submit_labels("nope", "{}"); }) == 404);

  CHECK(status_of([&] { store.create("{"); }) == 422);
  CHECK(status_of([&] { store.create(R"({"strategy": "heal"})"); }) == 422);
  CHECK(status_of([&] { store.create(R"({"dataset_ref": "pool.csv", "K": 0})"); }) == 422);
  CHECK(status_of([&] { store.create(R"({"dataset_ref": "pool.csv", "K": 5000})"); }) == 422);
  CHECK(status_of([&] { store.create(R"({"dataset_ref": "missing.csv"})"); }) == 422);
  CHECK(status_of([&] { store.create(R"({"dataset_ref": "pool.csv", "strategy": "coreset"})"); }) == 422);
  try {
    store.create(R"({"dataset_ref": "pool.csv", "ensemble": {"dims": 3}})");
  } catch (const ApiError& e) {
    CHECK(std::string(e.what()) == "unknown key 'ensemble.dims'");
  }

  const auto before = store.status(id);
  // An index outside the pending batch rejects the whole request.
  std::set<std::size_t> pending;
  for (const auto& s : batch["samples"]) pending.insert(s["index"].get<std::size_t>());
  std::size_t outside = 0;
  while (pending.contains(outside)) ++outside;
  json bad = fx.labels_for(batch, 3);
  bad["labels"].push_back({{"index", outside}, {"label", 0}});
  CHECK(status_of([&] { store.submit_labels(id, bad.dump()); }) == 409);
  CHECK(store.status(id) == before);

  CHECK(status_of([&] { store.submit_labels(id, "not json"); }) == 422);
  CHECK(status_of([&] { store.submit_labels(id, R"({"labels": 3})"); }) == 422);
  CHECK(status_of([&] { store.submit_labels(id, R"({"labels": [{"index": -1, "label": 0}]})"); }) == 422);
  const auto idx = batch["samples"][0]["index"].get<std::size_t>();
  CHECK(status_of([&] {
          store.submit_labels(id, json{{"labels", {{{"index", idx}, {"label", 7}}}}}.dump());
        }) == 422);
  CHECK(status_of([&] {
          store.submit_labels(id, json{{"labels", {{{"index", idx}, {"label", "delta"}}}}}.dump());
        }) == 422);
  CHECK(status_of([&] {
          store.submit_labels(
              id, json{{"labels", {{{"index", idx}, {"label", 0}}, {{"index", idx}, {"label", 1}}}}}.dump());
        }) == 422);
  CHECK(store.status(id) == before);

  // Once the batch is folded in, its indices are no longer pending.
  store.submit_labels(id, fx.labels_for(batch).dump());
  CHECK(status_of([&] { store.submit_labels(id, fx.labels_for(batch, 1).dump()); }) == 409);
}

TEST_CASE("sessions survive a restart") {
  Fixture fx("restart");
  std::string id;
  json batch;
  {
    SessionStore store(fx.options());
    id = json::parse(store.create(kSessionBody))["session_id"];
    store.submit_labels(id, fx.labels_for(json::parse(store.batch(id))).dump());
    batch = json::parse(store.batch(id));
    store.submit_labels(id, fx.labels_for(batch, 3).dump());
  }
  SessionStore reloaded(fx.options());
  CHECK(reloaded.size() == 1);
  const auto st = json::parse(reloaded.status(id));
  CHECK(st["status"] == "awaiting_labels");
  CHECK(st["remaining"] == 7);
  const auto again = json::parse(reloaded.batch(id));
  json a = again, b = batch;
  for (auto* doc : {&a, &b})
    for (auto& smp : (*doc)["samples"]) smp.erase("labeled");
  CHECK(a == b);
  for (std::size_t j = 0; j < 10; ++j) {
    CHECK(again["samples"][j]["index"] == batch["samples"][j]["index"]);
    CHECK(again["samples"][j]["score"] == batch["samples"][j]["score"]);
    CHECK(again["samples"][j]["labeled"] == (j < 3));
  }
  const auto ack = json::parse(reloaded.submit_labels(id, fx.labels_for(batch).dump()));
  CHECK(ack["remaining"] == 0);
  CHECK(json::parse(reloaded.status(id))["labeled_count"] == 20);

  // Corrupt sessions are skipped without taking the others down.
  fs::create_directories(fx.state / "sessions" / "broken");
  std::ofstream(fx.state / "sessions" / "broken" / "session.json") << "{";
  SessionStore third(fx.options());
  CHECK(third.size() == 1);
}

TEST_CASE("a restart during training redoes the fit") {
  Fixture fx("training");
  SessionStore store(fx.options());
  const std::string id = json::parse(store.create(kSessionBody))["session_id"];
  store.submit_labels(id, fx.labels_for(json::parse(store.batch(id))).dump());
  const auto batch = json::parse(store.batch(id));

  // Snapshot with the batch pending, then finish it normally.
  const auto snapshot = fx.root / "snapshot";
  fs::copy(fx.state, snapshot, fs::copy_options::recursive);
  store.submit_labels(id, fx.labels_for(batch).dump());
  const auto expected = store.curve_csv(id);

  // Forge the state persisted just before fitting: labels committed, old checkpoint.
  const auto file = snapshot / "sessions" / id / "session.json";
  auto doc = json::parse(read_file(file));
  for (const auto& smp : batch["samples"]) {
    const auto idx = smp["index"].get<std::size_t>();
    doc["labeled"].push_back(idx);
    doc["labels"].push_back(fx.truth(idx));
  }
  doc["pool_round"] = doc["pool_round"].get<int>() + 1;
  doc["committed"] = 2;
  doc["status"] = "training";
  doc["pending"] = nullptr;
  write_file_atomic(file, doc.dump());

  SessionStore recovered({snapshot, fx.root, 2});
  const auto st = json::parse(recovered.status(id));
  CHECK(st["status"] == "idle");
  CHECK(st["labeled_count"] == 20);
  CHECK(recovered.curve_csv(id) == expected);
}

TEST_CASE("session curve matches the batch runner") {
  Fixture fx("parity");
  for (const char* strategy : {"heal", "heal_diverse", "random"}) {
    CAPTURE(strategy);
    json body = json::parse(kSessionBody);
    body["strategy"] = strategy;
    body["ensemble"]["regen_fraction"] = 0.1;
    body["ensemble"]["regen_interval"] = 2;
    std::string id;
    {
      SessionStore store(fx.options());
      id = json::parse(store.create(body.dump()))["session_id"];
      store.submit_labels(id, fx.labels_for(json::parse(store.batch(id))).dump());
      store.batch(id);
    }
    // Restart between proposing a batch and labeling it.
    SessionStore store(fx.options());
    while (json::parse(store.status(id))["status"] != "finished")
      store.submit_labels(id, fx.labels_for(json::parse(store.batch(id))).dump());

    RunConfig cfg;
    cfg.dataset = fx.root / "pool.csv";
    cfg.strategies = {parse_strategy(strategy)};
    cfg.seeds = {3};
    cfg.batch_size = 10;
    cfg.n_init = 10;
    cfg.label_budget = 40;
    cfg.model.members = 4;
    cfg.model.dim = 256;
    cfg.model.bandwidth = 0.8;
    cfg.model.train.regen_fraction = 0.1;
    cfg.model.train.regen_interval = 2;
    cfg.record_wall_time = false;
    cfg.output = fx.root / (std::string("run-") + strategy);
    const auto result = run_learning_curve(cfg);
    REQUIRE(result.all_complete());
    CHECK(store.curve_csv(id) == format_curve_csv(result.runs[0].curve));
  }
}

TEST_CASE("http endpoints") {
  Fixture fx("http");
  SessionStore store(fx.options());
  HttpServer server(store);
  const int port = server.bind("127.0.0.1", 0);
  std::thread thread([&] { server.listen(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto res = client.Get("/strategies");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["strategies"].size() == 6);

  res = client.Post("/sessions", kSessionBody, "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  const std::string id = json::parse(res->body)["session_id"];

  res = client.Get("/sessions/" + id + "/batch");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto batch = json::parse(res->body);

  res = client.Post("/sessions/" + id + "/labels", R"({"labels": [{"index": 100000, "label": 0}]})",
                    "application/json");
  CHECK(res->status == 409);
  CHECK(json::parse(res->body).contains("error"));
  res = client.Post("/sessions/" + id + "/labels", "[1,2", "application/json");
  CHECK(res->status == 422);
  res = client.Get("/sessions/unknown/status");
  CHECK(res->status == 404);

  res = client.Post("/sessions/" + id + "/labels", fx.labels_for(batch).dump(), "application/json");
  CHECK(res->status == 200);
  res = client.Get("/sessions/" + id + "/status");
  CHECK(json::parse(res->body)["round"] == 2);
  res = client.Get("/sessions/" + id + "/curve");
  CHECK(json::parse(res->body)["rows"].size() == 1);
  res = client.Get("/sessions/" + id + "/curve?format=csv");
  CHECK(res->body.starts_with(kCurveHeader));

  // Distinct sessions proceed concurrently.
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i)
    ids.push_back(json::parse(client.Post("/sessions", kSessionBody, "application/json")->body)["session_id"]);
  std::vector<std::thread> workers;
  std::atomic<int> ok{0};
  for (const auto& sid : ids)
    workers.emplace_back([&, sid] {
      httplib::Client c("127.0.0.1", port);
      c.set_read_timeout(60);
      auto b = c.Get("/sessions/" + sid + "/batch");
      auto r = c.Post("/sessions/" + sid + "/labels", fx.labels_for(json::parse(b->body)).dump(), "application/json");
      if (r && r->status == 200) ++ok;
    });
  for (auto& t : workers) t.join();
  CHECK(ok == 3);

  server.stop();
  thread.join();

  // A second server on a taken port fails with a diagnostic.
  HttpServer first(store), second(store);
  const int taken = first.bind("127.0.0.1", 0);
  CHECK_THROWS_AS(second.bind("127.0.0.1", taken), Error);
}

TEST_CASE("unwritable state directory") {
  Fixture fx("unwritable");
  std::ofstream(fx.root / "file") << "x";
  CHECK_THROWS_AS(SessionStore({fx.root / "file" / "state", fx.root, 1}), Error);
}
