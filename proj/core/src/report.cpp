#include "circuits/report.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "circuits/digest.hpp"
#include "circuits/error.hpp"

namespace circuits {

namespace {

using nlohmann::json;

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double read_num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::vector<double> read_nums(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(read_num(x));
  return v;
}

json envelope(const std::string& schema) { return json{{"schema", "circuits." + schema}, {"version", kReportVersion}}; }

json optional_num(const std::optional<double>& v) { return v ? num(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed ") + what + " report: " + e.what());
  }
}

}  // namespace

void check_schema(const json& j, const std::string& schema) {
  if (!j.is_object() || !j.contains("schema") || j["schema"] != "circuits." + schema) {
    throw FormatError("expected a circuits." + schema + " report");
  }
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kReportVersion) {
    throw VersionError("unsupported circuits." + schema + " report version");
  }
}

json to_report(const PreservationReport& r) {
  json j = envelope("preservation");
  j["target"] = to_string(r.target);
  j["criterion"] = to_string(r.criterion);
  j["metric"] = to_string(r.metric);
  j["bias_mode"] = to_string(r.bias_mode);
  j["model_digest"] = r.model_digest;
  j["image_digest"] = r.image_digest;
  j["score_digest"] = r.score_digest;
  j["relevant_count"] = r.relevant_count;
  j["original_values"] = nums(r.original_values);
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"sparsity", num(e.sparsity)},
                       {"kept", e.kept},
                       {"effective_sparsity", num(e.effective_sparsity)},
                       {"metric", num(e.metric)},
                       {"connected", e.connected},
                       {"circuit_values", nums(e.circuit_values)}});
  }
  j["entries"] = std::move(entries);
  return j;
}

PreservationReport preservation_report_from_json(const json& j) {
  check_schema(j, "preservation");
  return guarded("preservation", [&] {
    PreservationReport r;
    r.target = parse_target(j.at("target").get<std::string>());
    r.criterion = criterion_from_string(j.at("criterion").get<std::string>());
    r.metric = metric_kind_from_string(j.at("metric").get<std::string>());
    r.bias_mode = bias_mode_from_string(j.at("bias_mode").get<std::string>());
    r.model_digest = j.at("model_digest").get<std::string>();
    r.image_digest = j.at("image_digest").get<std::string>();
    r.score_digest = j.at("score_digest").get<std::string>();
    r.relevant_count = j.at("relevant_count").get<std::size_t>();
    r.original_values = read_nums(j.at("original_values"));
    for (const auto& e : j.at("entries")) {
      SweepEntry s;
      s.sparsity = read_num(e.at("sparsity"));
      s.kept = e.at("kept").get<std::size_t>();
      s.effective_sparsity = read_num(e.at("effective_sparsity"));
      s.metric = read_num(e.at("metric"));
      s.connected = e.at("connected").get<bool>();
      s.circuit_values = read_nums(e.at("circuit_values"));
      r.entries.push_back(std::move(s));
    }
    return r;
  });
}

json to_report(const SubcircuitReport& r) {
  json j = envelope("subcircuit");
  j["target"] = to_string(r.target);
  j["threshold"] = num(r.threshold);
  j["a_on_a"] = to_report(r.a_on_a);
  j["a_on_b"] = to_report(r.a_on_b);
  j["b_on_b"] = to_report(r.b_on_b);
  j["b_on_a"] = to_report(r.b_on_a);
  j["iou_sparsity_a"] = optional_num(r.iou_sparsity_a);
  j["iou_sparsity_b"] = optional_num(r.iou_sparsity_b);
  json iou = json::array();
  for (const auto& l : r.iou) iou.push_back({{"layer", l.layer}, {"iou", num(l.iou)}});
  j["iou"] = std::move(iou);
  return j;
}

SubcircuitReport subcircuit_report_from_json(const json& j) {
  check_schema(j, "subcircuit");
  return guarded("subcircuit", [&] {
    SubcircuitReport r;
    r.target = parse_target(j.at("target").get<std::string>());
    r.threshold = read_num(j.at("threshold"));
    r.a_on_a = preservation_report_from_json(j.at("a_on_a"));
    r.a_on_b = preservation_report_from_json(j.at("a_on_b"));
    r.b_on_b = preservation_report_from_json(j.at("b_on_b"));
    r.b_on_a = preservation_report_from_json(j.at("b_on_a"));
    r.iou_sparsity_a = read_optional(j.at("iou_sparsity_a"));
    r.iou_sparsity_b = read_optional(j.at("iou_sparsity_b"));
    for (const auto& l : j.at("iou")) r.iou.push_back(LayerIou{l.at("layer").get<std::string>(), read_num(l.at("iou"))});
    return r;
  });
}

json to_report(const ActivationSurface& s) {
  json j = envelope("surface");
  j["target"] = to_string(s.target);
  j["radii"] = nums(s.radii);
  j["rotations"] = nums(s.rotations);
  json rows = json::array();
  for (const auto& row : s.values) rows.push_back(nums(row));
  j["values"] = std::move(rows);
  j["provenance"] = s.provenance;
  j["kept"] = s.kept;
  return j;
}

ActivationSurface activation_surface_from_json(const json& j) {
  check_schema(j, "surface");
  return guarded("surface", [&] {
    ActivationSurface s;
    s.target = parse_target(j.at("target").get<std::string>());
    s.radii = read_nums(j.at("radii"));
    s.rotations = read_nums(j.at("rotations"));
    for (const auto& row : j.at("values")) s.values.push_back(read_nums(row));
    s.provenance = j.at("provenance").get<std::string>();
    s.kept = j.at("kept").get<std::size_t>();
    return s;
  });
}

json to_report(const PolysemanticScan& scan) {
  json j = envelope("clusters");
  j["layer"] = scan.layer;
  json channels = json::array();
  for (const auto& c : scan.channels) {
    channels.push_back({{"channel", c.channel},
                        {"low_signal", c.low_signal},
                        {"cluster_count", c.clusters.cluster_count},
                        {"min_cluster_size", c.clusters.min_cluster_size},
                        {"labels", c.clusters.labels},
                        {"stabilities", nums(c.clusters.stabilities)},
                        {"combined_stability", num(c.combined_stability)}});
  }
  j["channels"] = std::move(channels);
  j["candidates"] = scan.candidates;
  return j;
}

json to_report(const TrainHistory& history) {
  json j = envelope("train_history");
  json body = history;
  j.update(body);
  return j;
}

json to_report(const ModelGraph& model, const CircuitMask& mask) {
  json j = envelope("mask");
  j["model_digest"] = mask.model_digest;
  j["target"] = to_string(mask.target);
  j["bias_mode"] = to_string(mask.bias_mode);
  j["sparsity"] = num(mask.sparsity);
  j["relevant_count"] = mask.relevant_count;
  j["criterion"] = mask.provenance.criterion;
  j["image_digest"] = mask.provenance.image_digest;
  j["connected"] = check_connected(model, mask);
  j["effective_sparsity"] = num(effective_sparsity(model, mask));
  json kept = json::array();
  for (std::size_t k : mask.kept) {
    const KernelId id = model.kernel_id(k);
    kept.push_back({{"layer", id.layer}, {"out", id.out}, {"in", id.in}});
  }
  j["kept"] = std::move(kept);
  return j;
}

std::string report_digest(const json& j) { return sha256_hex(j.dump()); }

void save_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace circuits
