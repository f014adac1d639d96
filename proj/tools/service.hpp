#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "actions.hpp"

namespace httplib {
class Server;
}

namespace circuits::tools {

struct ApiResponse {
  ApiResponse(int s = 200, nlohmann::json b = {}, std::string t = {}, std::string ct = "application/json")
      : status(s), body(std::move(b)), text(std::move(t)), content_type(std::move(ct)) {}

  int status = 200;
  nlohmann::json body;
  std::string text;  // sent instead of body when non-empty
  std::string content_type = "application/json";
};

enum class JobStatus { queued, running, done, failed };
const char* to_string(JobStatus status);

struct JobRecord {
  std::string id;
  std::string kind;
  std::string payload_digest;
  nlohmann::json payload;  // normalized request
  JobStatus status = JobStatus::queued;
  nlohmann::json result;
  std::string error;
};

/// JSON API over a data root. Jobs run on a fixed pool of workers; the job
/// store is the only shared state and is guarded by one mutex.
///
///   GET  /api/models                  GET /api/models/{name}/features
///   GET  /api/datasets                GET /api/patches?model&layer&channel&images[&n]
///   POST /api/prune|sweep|subcircuit|surface  -> 202 {job_id}
///   GET  /api/jobs/{id}               GET /api/reports[/{id}]
///   GET  /api/masks/{id}              GET /api/diagram/{mask-id}?format=json|dot
class Service {
 public:
  explicit Service(Workspace workspace, std::size_t workers = 1);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body,
                     const std::multimap<std::string, std::string>& query = {});
  void mount(httplib::Server& server);

  /// Blocks until no job is queued or running; false on timeout.
  bool wait_idle(std::chrono::milliseconds timeout);
  const Workspace& workspace() const noexcept { return ws_; }

 private:
  ApiResponse submit(const std::string& kind, const std::string& body);
  ApiResponse get(const std::vector<std::string>& parts, const std::multimap<std::string, std::string>& query);
  void work();
  nlohmann::json execute(const JobRecord& job);

  Workspace ws_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable idle_;
  std::map<std::string, std::shared_ptr<JobRecord>> jobs_;
  std::deque<std::shared_ptr<JobRecord>> queue_;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace circuits::tools
