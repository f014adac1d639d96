#include "actions.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "circuits/cluster.hpp"
#include "circuits/connectivity.hpp"
#include "circuits/dataset.hpp"
#include "circuits/digest.hpp"
#include "circuits/error.hpp"
#include "circuits/metrics.hpp"
#include "circuits/model_io.hpp"
#include "circuits/probes.hpp"
#include "circuits/receptive_field.hpp"
#include "circuits/report.hpp"

namespace circuits::tools {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path resolve(const fs::path& dir, const std::string& ref, const std::string& ext, const char* what) {
  if (ref.empty()) throw ValidationError(std::string("missing ") + what);
  const fs::path direct(ref);
  if (fs::exists(direct)) return direct;
  if (ref.find('/') == std::string::npos) {
    if (fs::exists(dir / ref)) return dir / ref;
    if (fs::exists(dir / (ref + ext))) return dir / (ref + ext);
  }
  throw IoError(std::string("unknown ") + what + " '" + ref + "'");
}

std::vector<fs::path> files_with(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || j[key].is_null()) throw ValidationError(std::string("missing field '") + key + "'");
  return j[key];
}

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return require(j, key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + key + "' has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  return get_as<T>(j, key);
}

std::vector<double> sparsities_from(const json& v) {
  if (v.is_string()) return parse_sparsity_list(v.get<std::string>());
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array()) {
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ValidationError("sparsities must be numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  throw ValidationError("sparsities must be a list or a HI:LO:logN / HI:LO:linN string");
}

void check_sparsity(double s) {
  if (!(s > 0.0 && s <= 1.0)) throw ValidationError("sparsity " + std::to_string(s) + " is outside (0, 1]");
}

std::vector<double> numbers_from(const json& v, const char* key) {
  if (!v.is_array() || v.empty()) throw ValidationError(std::string("field '") + key + "' must be a non-empty list");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ValidationError(std::string("field '") + key + "' must contain numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

json normalize_selection(const Workspace& ws, const json& s) {
  json out;
  if (s.is_string()) {
    out["dataset"] = s;
  } else if (s.is_object()) {
    out["dataset"] = get_as<std::string>(s, "dataset");
    for (const char* key : {"label", "offset", "count"}) {
      if (s.contains(key) && !s[key].is_null()) {
        if (!s[key].is_number_unsigned()) throw ValidationError(std::string("image selection '") + key + "' must be a non-negative integer");
        out[key] = s[key];
      }
    }
  } else {
    throw ValidationError("image selection must be a dataset name or an object");
  }
  ws.dataset_path(out["dataset"].get<std::string>());
  return out;
}

ModelGraph load(const Workspace& ws, const json& request) {
  return load_model(ws.model_path(get_as<std::string>(request, "model")));
}

json base_request(const Workspace& ws, const json& request, bool with_images) {
  json n;
  n["model"] = get_as<std::string>(request, "model");
  const ModelGraph model = load_model(ws.model_path(n["model"]));
  const FeatureTarget target = parse_target(get_as<std::string>(request, "target"));
  validate_target(model, target);
  n["target"] = to_string(target);
  if (with_images) n["images"] = normalize_selection(ws, require(request, "images"));
  return n;
}

void normalize_options(const json& request, json& n) {
  const Criterion c = criterion_from_string(get_or<std::string>(request, "criterion", "actgrad"));
  n["criterion"] = to_string(c);
  n["bias_mode"] = to_string(bias_mode_from_string(get_or<std::string>(request, "bias_mode", "masked")));
  n["seed"] = get_or<std::uint64_t>(request, "seed", 0);
  n["force_iterations"] = get_or<std::size_t>(request, "force_iterations", 10);
  n["normalize"] = get_or<bool>(request, "normalize", false);
  if (request.contains("metric") && !request["metric"].is_null()) {
    n["metric"] = to_string(metric_kind_from_string(get_as<std::string>(request, "metric")));
  } else {
    n["metric"] = nullptr;
  }
}

SweepOptions options_from(const json& n) {
  SweepOptions o;
  o.criterion = criterion_from_string(n["criterion"]);
  o.bias_mode = bias_mode_from_string(n["bias_mode"]);
  o.seed = n["seed"];
  o.force_iterations = n["force_iterations"];
  o.normalize = n["normalize"];
  if (!n["metric"].is_null()) o.metric = metric_kind_from_string(n["metric"]);
  return o;
}

SaliencyMap saliency_for(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& o,
                         std::span<const Tensor> images, std::size_t kappa) {
  SaliencyMap s;
  switch (o.criterion) {
    case Criterion::actgrad: s = score_actgrad(model, target, images); break;
    case Criterion::snip: s = score_snip(model, target, images); break;
    case Criterion::magnitude: s = score_magnitude(model, target); break;
    case Criterion::random: s = score_random(model, target, o.seed); break;
    case Criterion::force:
      if (kappa >= relevant_kernel_indices(model, target).size()) {
        s = score_snip(model, target, images);
        s.criterion = Criterion::force;
      } else {
        s = score_force(model, target, images, kappa, o.force_iterations).scores;
      }
      break;
  }
  return o.normalize ? minmax_normalize(model, s) : s;
}

}  // namespace

Workspace::Workspace(fs::path root) : root_(std::move(root)) {}

Workspace Workspace::from_env() {
  const char* env = std::getenv("CIRCUITS_DATA_ROOT");
  return Workspace(env && *env ? fs::path(env) : fs::current_path());
}

fs::path Workspace::model_path(const std::string& ref) const { return resolve(models_dir(), ref, ".cfm", "model"); }

fs::path Workspace::dataset_path(const std::string& ref) const {
  return resolve(datasets_dir(), ref, ".cfdata", "image set");
}

std::optional<fs::path> Workspace::find_model_by_digest(const std::string& digest) const {
  for (const auto& p : models()) {
    try {
      if (load_model(p).digest() == digest) return p;
    } catch (const Error&) {
    }
  }
  return std::nullopt;
}

std::vector<fs::path> Workspace::models() const { return files_with(models_dir(), ".cfm"); }
std::vector<fs::path> Workspace::datasets() const { return files_with(datasets_dir(), ".cfdata"); }

std::vector<Tensor> select_images(const Workspace& ws, const json& selection) {
  const json s = normalize_selection(ws, selection);
  const fs::path path = ws.dataset_path(s["dataset"]);
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  const auto files = fs::is_directory(path) ? files_with(path, ".cfdata") : std::vector<fs::path>{path};
  for (const auto& f : files) {
    Dataset d = load_dataset(f);
    images.insert(images.end(), d.images.begin(), d.images.end());
    labels.insert(labels.end(), d.labels.begin(), d.labels.end());
  }
  if (images.empty()) throw IoError("no images under '" + path.string() + "'");
  if (s.contains("label")) {
    const auto want = s["label"].get<std::size_t>();
    std::vector<Tensor> keep;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (labels[i] == want) keep.push_back(std::move(images[i]));
    images = std::move(keep);
  }
  const std::size_t offset = s.value("offset", std::size_t{0});
  const std::size_t count = s.value("count", images.size());
  if (offset >= images.size()) throw ValidationError("image selection is empty");
  const std::size_t end = std::min(images.size(), offset + count);
  return std::vector<Tensor>(images.begin() + static_cast<std::ptrdiff_t>(offset),
                             images.begin() + static_cast<std::ptrdiff_t>(end));
}

json normalize_prune(const Workspace& ws, const json& request) {
  json n = base_request(ws, request, true);
  normalize_options(request, n);
  n["sparsity"] = get_as<double>(request, "sparsity");
  check_sparsity(n["sparsity"]);
  return n;
}

json normalize_sweep(const Workspace& ws, const json& request) {
  json n = base_request(ws, request, true);
  normalize_options(request, n);
  const auto sp = sparsities_from(require(request, "sparsities"));
  for (double s : sp) check_sparsity(s);
  n["sparsities"] = sp;
  return n;
}

json normalize_subcircuit(const Workspace& ws, const json& request) {
  json n = base_request(ws, request, false);
  normalize_options(request, n);
  n["images_a"] = normalize_selection(ws, require(request, "images_a"));
  n["images_b"] = normalize_selection(ws, require(request, "images_b"));
  const auto sp = sparsities_from(require(request, "sparsities"));
  for (double s : sp) check_sparsity(s);
  n["sparsities"] = sp;
  n["threshold"] = get_or<double>(request, "threshold", 0.15);
  return n;
}

json normalize_surface(const Workspace& ws, const json& request) {
  json n = base_request(ws, request, false);
  const FeatureTarget t = parse_target(n["target"]);
  if (t.kind != ObjectiveKind::spatial_unit || !t.position) {
    throw ValidationError("surfaces need a unit target LAYER:CHANNEL@H,W");
  }
  n["kind"] = to_string(probe_kind_from_string(get_or<std::string>(request, "kind", "arc")));
  n["radii"] = numbers_from(require(request, "radii"), "radii");
  n["rotations"] = numbers_from(require(request, "rotations"), "rotations");
  n["stroke_width"] = get_or<double>(request, "stroke_width", 1.0);
  n["foreground"] = get_or<double>(request, "foreground", 1.0);
  n["background"] = get_or<double>(request, "background", 0.0);
  n["mask"] = nullptr;
  if (request.contains("mask_id") && !request["mask_id"].is_null()) {
    const fs::path p = ws.masks_dir() / (get_as<std::string>(request, "mask_id") + ".mask");
    if (!fs::exists(p)) throw IoError("unknown mask '" + request["mask_id"].get<std::string>() + "'");
    n["mask"] = p.string();
  } else if (request.contains("mask") && !request["mask"].is_null()) {
    const fs::path p = get_as<std::string>(request, "mask");
    if (!fs::exists(p)) throw IoError("unknown mask file '" + p.string() + "'");
    n["mask"] = p.string();
  }
  return n;
}

json normalize_cluster(const Workspace& ws, const json& request) {
  json n;
  n["model"] = get_as<std::string>(request, "model");
  const ModelGraph model = load_model(ws.model_path(n["model"]));
  const std::string layer = get_as<std::string>(request, "layer");
  if (!model.has_layer(layer)) throw ValidationError("model has no layer '" + layer + "'");
  n["layer"] = layer;
  n["images"] = normalize_selection(ws, require(request, "images"));
  n["n"] = get_or<std::size_t>(request, "n", 300);
  n["min_cluster_size"] = get_or<std::size_t>(request, "min_cluster_size", 10);
  return n;
}

PruneArtifacts run_prune(const Workspace& ws, const json& n) {
  PruneArtifacts a;
  a.model = load(ws, n);
  const FeatureTarget target = parse_target(n["target"]);
  const SweepOptions o = options_from(n);
  const std::vector<Tensor> images = select_images(ws, n["images"]);
  const std::vector<double> sp{n["sparsity"].get<double>()};
  const auto masks = sweep_masks(a.model, target, o, sp, images);
  a.mask = masks[0];
  a.saliency = saliency_for(a.model, target, o, images, a.mask.kept.size());
  a.mask_text = mask_to_text(a.model, a.mask);
  a.saliency_text = saliency_to_text(a.model, a.saliency);
  a.mask_id = sha256_hex(a.mask_text);
  a.mask_report = to_report(a.model, a.mask);
  a.report = to_report(evaluate_sweep(a.model, target, o, sp, masks, images));
  return a;
}

json run_sweep(const Workspace& ws, const json& n) {
  const ModelGraph model = load(ws, n);
  const auto sp = n["sparsities"].get<std::vector<double>>();
  return to_report(sparsity_sweep(model, parse_target(n["target"]), options_from(n), sp, select_images(ws, n["images"])));
}

json run_subcircuit(const Workspace& ws, const json& n) {
  const ModelGraph model = load(ws, n);
  const auto sp = n["sparsities"].get<std::vector<double>>();
  return to_report(subcircuit_separation(model, parse_target(n["target"]), select_images(ws, n["images_a"]),
                                         select_images(ws, n["images_b"]), sp, options_from(n), n["threshold"]));
}

json run_surface(const Workspace& ws, const json& n) {
  const ModelGraph model = load(ws, n);
  ProbeSpec spec;
  spec.kind = probe_kind_from_string(n["kind"]);
  spec.radii = n["radii"].get<std::vector<double>>();
  spec.rotations = n["rotations"].get<std::vector<double>>();
  spec.stroke_width = n["stroke_width"];
  spec.foreground = n["foreground"];
  spec.background = n["background"];
  spec.canvas_height = model.input_shape()[1];
  spec.canvas_width = model.input_shape()[2];
  std::optional<CircuitMask> mask;
  if (!n["mask"].is_null()) mask = load_mask(model, n["mask"].get<std::string>());
  return to_report(activation_surface(model, parse_target(n["target"]), spec, mask ? &*mask : nullptr));
}

json run_cluster(const Workspace& ws, const json& n) {
  const ModelGraph model = load(ws, n);
  return to_report(find_polysemantic_candidates(model, n["layer"], select_images(ws, n["images"]), n["n"],
                                                n["min_cluster_size"]));
}

DiagramGraph diagram_for_mask(const Workspace& ws, const fs::path& mask_path, const std::string& model_ref,
                              const std::optional<fs::path>& saliency_path) {
  const std::string text = read_file(mask_path);
  fs::path model_path;
  if (!model_ref.empty()) {
    model_path = ws.model_path(model_ref);
  } else {
    const std::string digest = mask_model_digest(text);
    const auto found = ws.find_model_by_digest(digest);
    if (!found) {
      throw IoError("no model with digest " + digest.substr(0, 12) + " under '" + ws.models_dir().string() +
                    "'; pass --model or set CIRCUITS_DATA_ROOT");
    }
    model_path = *found;
  }
  const ModelGraph model = load_model(model_path);
  const CircuitMask mask = mask_from_text(model, text);
  if (saliency_path) {
    const SaliencyMap s = load_saliency(model, *saliency_path);
    return build_diagram(model, mask, &s);
  }
  return build_diagram(model, mask);
}

json model_summary(const ModelGraph& model, const std::string& name) {
  json layers = json::array();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const LayerSpec& s = model.layer(l);
    const Shape& shape = model.output_shape(l);
    layers.push_back({{"name", s.name},
                      {"kind", to_string(s.kind)},
                      {"inputs", s.inputs},
                      {"shape", shape.dims()}});
  }
  return {{"name", name},
          {"digest", model.digest()},
          {"kernels", model.kernel_count()},
          {"layers", std::move(layers)},
          {"metadata", {{"seed", model.metadata().seed}, {"train_config_digest", model.metadata().train_config_digest}}}};
}

json feature_list(const ModelGraph& model) {
  json out = json::array();
  for (std::size_t l : model.conv_layers()) {
    const Shape& s = model.output_shape(l);
    const ReceptiveField rf = receptive_field(model, l);
    for (std::size_t c = 0; c < s[0]; ++c) {
      const FeatureTarget t = FeatureTarget::sum_abs(model.layer(l).name, c);
      out.push_back({{"layer", model.layer(l).name},
                     {"channel", c},
                     {"target", to_string(t)},
                     {"relevant_kernels", relevant_kernel_indices(model, t).size()},
                     {"height", s[1]},
                     {"width", s[2]},
                     {"receptive_field", rf.size_h()}});
    }
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << bytes;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace circuits::tools
