#include "service.hpp"

#include <filesystem>
#include <sstream>

#include <httplib.h>

#include "circuits/cluster.hpp"
#include "circuits/dataset.hpp"
#include "circuits/digest.hpp"
#include "circuits/error.hpp"
#include "circuits/model_io.hpp"
#include "circuits/report.hpp"

namespace circuits::tools {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

ApiResponse error(int status, const std::string& message) {
  return {status, json{{"error", message}, {"status", status}}, {}, "application/json"};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string item;
  while (std::getline(ss, item, '/'))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

std::string query_value(const std::multimap<std::string, std::string>& q, const std::string& key,
                        const std::string& fallback = {}) {
  auto it = q.find(key);
  return it == q.end() ? fallback : it->second;
}

std::size_t query_index(const std::multimap<std::string, std::string>& q, const std::string& key, std::size_t fallback) {
  const std::string v = query_value(q, key);
  if (v.empty()) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ValidationError("query parameter '" + key + "' must be a non-negative integer");
  }
}

// Ids become file names; only hex digests are accepted.
bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         id.find_first_not_of("0123456789abcdef") == std::string::npos;
}

json job_view(const JobRecord& job) {
  json j{{"job_id", job.id},
         {"kind", job.kind},
         {"status", to_string(job.status)},
         {"payload_digest", job.payload_digest},
         {"payload", job.payload},
         {"location", "/api/jobs/" + job.id}};
  if (job.status == JobStatus::done) j["result"] = job.result;
  if (job.status == JobStatus::failed) j["error"] = job.error;
  return j;
}

std::string store_report(const Workspace& ws, const json& report) {
  const std::string id = report_digest(report);
  fs::create_directories(ws.reports_dir());
  const fs::path p = ws.reports_dir() / (id + ".json");
  if (!fs::exists(p)) save_json(report, p);
  return id;
}

}  // namespace

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

Service::Service(Workspace workspace, std::size_t workers) : ws_(std::move(workspace)) {
  if (workers == 0) throw ValidationError("the service needs at least one worker");
  for (std::size_t i = 0; i < workers; ++i) workers_.emplace_back([this] { work(); });
}

Service::~Service() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  for (auto& t : workers_) t.join();
}

bool Service::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return idle_.wait_for(lock, timeout, [this] { return queue_.empty() && running_ == 0; });
}

void Service::work() {
  for (;;) {
    std::shared_ptr<JobRecord> job;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      job->status = JobStatus::running;
      ++running_;
    }
    json result;
    std::string failure;
    try {
      result = execute(*job);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    {
      std::lock_guard lock(mutex_);
      if (failure.empty()) {
        job->result = std::move(result);
        job->status = JobStatus::done;
      } else {
        job->error = failure;
        job->status = JobStatus::failed;
      }
      --running_;
    }
    idle_.notify_all();
  }
}

json Service::execute(const JobRecord& job) {
  if (job.kind == "prune") {
    const PruneArtifacts a = run_prune(ws_, job.payload);
    fs::create_directories(ws_.masks_dir());
    write_file(ws_.masks_dir() / (a.mask_id + ".mask"), a.mask_text);
    write_file(ws_.masks_dir() / (a.mask_id + ".saliency"), a.saliency_text);
    const std::string report_id = store_report(ws_, a.report);
    return {{"mask_id", a.mask_id}, {"mask", a.mask_report}, {"report_id", report_id}, {"report", a.report}};
  }
  json report;
  if (job.kind == "sweep") report = run_sweep(ws_, job.payload);
  else if (job.kind == "subcircuit") report = run_subcircuit(ws_, job.payload);
  else if (job.kind == "surface") report = run_surface(ws_, job.payload);
  else throw ValidationError("unknown job kind '" + job.kind + "'");
  const std::string report_id = store_report(ws_, report);
  return {{"report_id", report_id}, {"report", report}};
}

ApiResponse Service::submit(const std::string& kind, const std::string& body) {
  json request = json::parse(body, nullptr, false);
  if (request.is_discarded() || !request.is_object()) return error(400, "request body must be a JSON object");
  std::string requested_id;
  if (request.contains("job_id")) {
    if (!request["job_id"].is_string() || !valid_id(request["job_id"])) {
      return error(400, "job_id must be lowercase hex, at most 64 characters");
    }
    requested_id = request["job_id"];
    request.erase("job_id");
  }

  json normalized;
  if (kind == "prune") normalized = normalize_prune(ws_, request);
  else if (kind == "sweep") normalized = normalize_sweep(ws_, request);
  else if (kind == "subcircuit") normalized = normalize_subcircuit(ws_, request);
  else if (kind == "surface") normalized = normalize_surface(ws_, request);
  else return error(404, "no job kind '" + kind + "'");

  const std::string digest = sha256_hex(kind + "\n" + normalized.dump());
  const std::string id = requested_id.empty() ? digest.substr(0, 32) : requested_id;
  std::shared_ptr<JobRecord> job;
  {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it != jobs_.end()) {
      if (it->second->payload_digest != digest) {
        return error(409, "job " + id + " already exists with a different request");
      }
      return {202, job_view(*it->second), {}, "application/json"};
    }
    job = std::make_shared<JobRecord>();
    job->id = id;
    job->kind = kind;
    job->payload_digest = digest;
    job->payload = normalized;
    jobs_.emplace(id, job);
    queue_.push_back(job);
  }
  wake_.notify_one();
  std::lock_guard lock(mutex_);
  return {202, job_view(*job), {}, "application/json"};
}

ApiResponse Service::get(const std::vector<std::string>& parts, const std::multimap<std::string, std::string>& query) {
  const std::string& what = parts[1];
  if (what == "models") {
    if (parts.size() == 2) {
      json list = json::array();
      for (const auto& p : ws_.models()) list.push_back(model_summary(load_model(p), p.stem().string()));
      return {200, json{{"models", list}}};
    }
    const ModelGraph model = load_model(ws_.model_path(parts[2]));
    if (parts.size() == 3) return {200, model_summary(model, parts[2])};
    if (parts.size() == 4 && parts[3] == "features") {
      return {200, json{{"model", parts[2]}, {"digest", model.digest()}, {"features", feature_list(model)}}};
    }
  } else if (what == "datasets" && parts.size() == 2) {
    json list = json::array();
    for (const auto& p : ws_.datasets()) {
      const Dataset d = load_dataset(p);
      list.push_back({{"name", p.stem().string()},
                      {"kind", to_string(d.spec.kind)},
                      {"images", d.size()},
                      {"classes", d.class_names},
                      {"image_size", d.spec.image_size}});
    }
    return {200, json{{"datasets", list}}};
  } else if (what == "jobs" && parts.size() == 3) {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(parts[2]);
    if (it == jobs_.end()) return error(404, "unknown job '" + parts[2] + "'");
    return {200, job_view(*it->second)};
  } else if (what == "reports") {
    if (parts.size() == 2) {
      json ids = json::array();
      if (fs::is_directory(ws_.reports_dir())) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(ws_.reports_dir()))
          if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
        std::sort(names.begin(), names.end());
        ids = names;
      }
      return {200, json{{"reports", ids}}};
    }
    if (parts.size() == 3) {
      const fs::path p = ws_.reports_dir() / (parts[2] + ".json");
      if (!valid_id(parts[2]) || !fs::exists(p)) return error(404, "unknown report '" + parts[2] + "'");
      return {200, load_json(p)};
    }
  } else if (what == "masks" && parts.size() == 3) {
    const fs::path p = ws_.masks_dir() / (parts[2] + ".mask");
    if (!valid_id(parts[2]) || !fs::exists(p)) return error(404, "unknown mask '" + parts[2] + "'");
    const std::string text = read_file(p);
    const auto model_path = ws_.find_model_by_digest(mask_model_digest(text));
    if (!model_path) return error(404, "the model of mask " + parts[2] + " is not under the data root");
    const ModelGraph model = load_model(*model_path);
    json j = to_report(model, mask_from_text(model, text));
    j["mask_id"] = parts[2];
    return {200, j};
  } else if (what == "diagram" && parts.size() == 3) {
    const fs::path p = ws_.masks_dir() / (parts[2] + ".mask");
    if (!valid_id(parts[2]) || !fs::exists(p)) return error(404, "unknown mask '" + parts[2] + "'");
    const fs::path sal = ws_.masks_dir() / (parts[2] + ".saliency");
    const DiagramGraph g =
        diagram_for_mask(ws_, p, {}, fs::exists(sal) ? std::optional<fs::path>(sal) : std::nullopt);
    const std::string format = query_value(query, "format", "json");
    if (format == "json") return {200, diagram_to_json(g)};
    if (format == "dot") return {200, json(), diagram_to_dot(g), "text/vnd.graphviz"};
    return error(400, "format must be json or dot");
  } else if (what == "patches" && parts.size() == 2) {
    const ModelGraph model = load_model(ws_.model_path(query_value(query, "model")));
    const std::string layer = query_value(query, "layer");
    if (!model.has_layer(layer)) throw ValidationError("model has no layer '" + layer + "'");
    const std::string images = query_value(query, "images");
    if (images.empty()) throw ValidationError("missing query parameter 'images'");
    const auto data = select_images(ws_, json(images));
    const ActivationHarvest h = harvest_top_activations(model, layer, query_index(query, "channel", 0), data,
                                                        query_index(query, "n", std::min<std::size_t>(16, data.size())));
    json records = json::array();
    for (const auto& r : h.records) {
      const Shape& s = r.patch.shape();
      records.push_back({{"image", r.image},
                         {"position", {{"h", r.position.h}, {"w", r.position.w}}},
                         {"value", r.value},
                         {"rect", {{"top", r.rect.top}, {"left", r.rect.left}, {"height", r.rect.height}, {"width", r.rect.width}}},
                         {"shape", s.dims()},
                         {"pixels", r.patch.values()}});
    }
    return {200, json{{"schema", "circuits.patches"},
                      {"version", kReportVersion},
                      {"layer", h.layer},
                      {"channel", h.channel},
                      {"low_signal", h.low_signal},
                      {"records", records}}};
  }
  return error(404, "no such endpoint");
}

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body,
                            const std::multimap<std::string, std::string>& query) {
  const auto parts = split_path(path);
  if (parts.size() < 2 || parts[0] != "api") return error(404, "no such endpoint");
  try {
    if (method == "POST" && parts.size() == 2) return submit(parts[1], body);
    if (method == "GET") return get(parts, query);
    return error(405, "method not allowed");
  } catch (const ValidationError& e) {
    return error(400, e.what());
  } catch (const IoError& e) {
    return error(404, e.what());
  } catch (const std::exception& e) {
    return error(500, std::string("internal error: ") + e.what());
  }
}

void Service::mount(httplib::Server& server) {
  auto adapt = [this](const char* method) {
    return [this, method](const httplib::Request& req, httplib::Response& res) {
      const std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
      const ApiResponse r = handle(method, req.path, req.body, query);
      res.status = r.status;
      if (r.text.empty()) res.set_content(r.body.dump(), "application/json");
      else res.set_content(r.text, r.content_type);
    };
  };
  server.Get(R"(/api/.*)", adapt("GET"));
  server.Post(R"(/api/.*)", adapt("POST"));
}

}  // namespace circuits::tools
