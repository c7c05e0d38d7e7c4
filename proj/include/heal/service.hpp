#pragma once

// Annotation sessions over HTTP. A session wraps one ActiveLearner and walks
//   awaiting_labels -> training -> idle -> awaiting_labels ...
// ending in `finished` once the label budget is spent. Each transition is
// written to state_dir before the request is answered.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "heal/error.hpp"

namespace heal {

// Request failure carrying the HTTP status to answer with.
class ApiError : public Error {
 public:
  ApiError(int status, const std::string& message) : Error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline constexpr std::size_t kMaxBatchSize = 1000;

struct ServiceOptions {
  std::filesystem::path state_dir;
  // Relative dataset_ref values resolve against this directory.
  std::filesystem::path data_root = ".";
  std::size_t workers = 0;
};

class Session;
struct Dataset;
struct RunConfig;

// Bodies in and out are JSON text.
class SessionStore {
 public:
  // Creates state_dir if needed and reloads every persisted session.
  explicit SessionStore(ServiceOptions options);
  ~SessionStore();

  std::string create(const std::string& body);
  std::string batch(const std::string& id);
  std::string submit_labels(const std::string& id, const std::string& body);
  std::string status(const std::string& id);
  std::string curve(const std::string& id);
  std::string curve_csv(const std::string& id);
  std::string strategies() const;

  std::size_t size() const;

 private:
  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<const Dataset> dataset(const RunConfig& config);

  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::uint64_t created_ = 0;
};

class HttpServer {
 public:
  explicit HttpServer(SessionStore& store);
  ~HttpServer();

  // Binds host:port (port 0 picks a free one) and returns the bound port.
  // Throws Error if the address is unavailable.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace heal
