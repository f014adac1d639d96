#include "circuits/circuit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "circuits/connectivity.hpp"
#include "circuits/error.hpp"

namespace circuits {

namespace {

constexpr const char* kMaskMagic = "# circuits mask v1";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<char> flags(std::size_t n, const std::vector<std::size_t>& indices) {
  std::vector<char> out(n, 0);
  for (std::size_t k : indices) out[k] = 1;
  return out;
}

struct MaskView {
  std::vector<char> relevant;
  std::vector<char> kept;
};

MaskView view(const ModelGraph& model, const CircuitMask& mask) {
  return MaskView{flags(model.kernel_count(), relevant_kernel_indices(model, mask.target)),
                  flags(model.kernel_count(), mask.kept)};
}

}  // namespace

const char* to_string(BiasMode mode) { return mode == BiasMode::masked ? "masked" : "pruned"; }

BiasMode bias_mode_from_string(const std::string& name) {
  if (name == "masked") return BiasMode::masked;
  if (name == "pruned") return BiasMode::pruned;
  throw ValidationError("unknown bias mode '" + name + "' (expected masked or pruned)");
}

bool CircuitMask::keeps(std::size_t kernel) const { return std::binary_search(kept.begin(), kept.end(), kernel); }

CircuitMask make_mask(const ModelGraph& model, const FeatureTarget& target, std::vector<std::size_t> kept,
                      BiasMode mode) {
  const auto relevant = relevant_kernel_indices(model, target);
  const auto is_relevant = flags(model.kernel_count(), relevant);
  std::sort(kept.begin(), kept.end());
  kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
  for (std::size_t k : kept) {
    if (k >= model.kernel_count()) throw GraphError("mask references unknown kernel index " + std::to_string(k));
    if (!is_relevant[k]) {
      const KernelId id = model.kernel_id(k);
      throw GraphError("mask keeps kernel " + id.layer + "(" + std::to_string(id.out) + "," + std::to_string(id.in) +
                       ") which is not relevant to target " + to_string(target));
    }
  }
  CircuitMask m;
  m.kept = std::move(kept);
  m.relevant_count = relevant.size();
  m.model_digest = model.digest();
  m.target = target;
  m.bias_mode = mode;
  m.sparsity = relevant.empty() ? 0.0 : static_cast<double>(m.kept.size()) / static_cast<double>(relevant.size());
  return m;
}

CircuitMask keep_all(const ModelGraph& model, const FeatureTarget& target, BiasMode mode) {
  return make_mask(model, target, relevant_kernel_indices(model, target), mode);
}

GateSet make_gates(const ModelGraph& model, const CircuitMask& mask) {
  const MaskView v = view(model, mask);
  for (std::size_t k : mask.kept) {
    if (k >= model.kernel_count() || !v.relevant[k]) {
      throw GraphError("mask references kernel " + std::to_string(k) + " outside the relevant set");
    }
  }
  const ChannelGraph graph(model);
  std::vector<char> alive;
  if (mask.bias_mode == BiasMode::pruned) {
    alive = graph.forward_reach(graph.input_nodes(), [&](const ChannelGraph::Edge& e) {
      return e.kernel == ChannelGraph::kNoKernel || !v.relevant[e.kernel] || v.kept[e.kernel];
    });
  }
  GateSet gates(model.layer_count());
  for (std::size_t layer : model.conv_layers()) {
    const Shape& w = model.params(layer).weights.shape();
    KernelGate gate = KernelGate::all_on(w[0], w[1]);
    bool touched = false;
    for (std::size_t co = 0; co < w[0]; ++co) {
      bool relevant_filter = false;
      for (std::size_t ci = 0; ci < w[1]; ++ci) {
        const std::size_t k = model.kernel_index(layer, co, ci);
        if (!v.relevant[k]) continue;
        relevant_filter = true;
        if (!v.kept[k]) {
          gate.kernel_on[co * w[1] + ci] = 0;
          touched = true;
        }
      }
      if (relevant_filter && mask.bias_mode == BiasMode::pruned && !alive[graph.node(layer, co)]) {
        gate.filter_on[co] = 0;
        touched = true;
      }
    }
    if (touched) gates[layer] = std::move(gate);
  }
  return gates;
}

bool check_connected(const ModelGraph& model, const CircuitMask& mask) {
  const ChannelGraph graph(model);
  const auto kept = flags(model.kernel_count(), mask.kept);
  const auto reach = graph.forward_reach(graph.input_nodes(), [&](const ChannelGraph::Edge& e) {
    return e.kernel == ChannelGraph::kNoKernel || kept[e.kernel];
  });
  for (std::size_t n : target_nodes(model, graph, mask.target)) {
    if (reach[n]) return true;
  }
  return false;
}

CircuitMask remove_dead_ends(const ModelGraph& model, const CircuitMask& mask) {
  const ChannelGraph graph(model);
  const auto kept = flags(model.kernel_count(), mask.kept);
  const auto allow = [&](const ChannelGraph::Edge& e) { return e.kernel == ChannelGraph::kNoKernel || kept[e.kernel]; };
  std::vector<std::size_t> sources = graph.input_nodes();
  if (mask.bias_mode == BiasMode::masked) {
    for (std::size_t layer : model.conv_layers()) {
      const auto& bias = model.params(layer).bias;
      for (std::size_t co = 0; co < bias.size(); ++co) {
        if (bias[co] != 0.0) sources.push_back(graph.node(layer, co));
      }
    }
  }
  const auto from_source = graph.forward_reach(sources, allow);
  const auto to_target = graph.backward_reach(target_nodes(model, graph, mask.target), allow);
  CircuitMask out = mask;
  out.kept.clear();
  for (std::size_t k : mask.kept) {
    const auto& e = graph.edges()[graph.kernel_edge(k)];
    if (from_source[e.from] && to_target[e.to]) out.kept.push_back(k);
  }
  return out;
}

double effective_sparsity(const ModelGraph& model, const CircuitMask& mask) {
  if (mask.relevant_count == 0) return 0.0;
  return static_cast<double>(remove_dead_ends(model, mask).kept.size()) / static_cast<double>(mask.relevant_count);
}

CircuitMask prune_biases(const ModelGraph&, const CircuitMask& mask) {
  CircuitMask out = mask;
  out.bias_mode = BiasMode::pruned;
  return out;
}

CircuitMask cleanup_for_diagram(const ModelGraph& model, const CircuitMask& mask) {
  return remove_dead_ends(model, prune_biases(model, remove_dead_ends(model, mask)));
}

std::vector<LayerIou> iou_per_layer(const ModelGraph& model, const CircuitMask& a, const CircuitMask& b) {
  if (a.model_digest != b.model_digest) {
    throw ValidationError("masks belong to different models (" + a.model_digest.substr(0, 12) + " vs " +
                          b.model_digest.substr(0, 12) + ")");
  }
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;  // layer -> (intersection, union)
  std::vector<std::size_t> all;
  std::set_union(a.kept.begin(), a.kept.end(), b.kept.begin(), b.kept.end(), std::back_inserter(all));
  for (std::size_t k : all) {
    auto& c = counts[model.locate_kernel(k).layer];
    ++c.second;
    if (a.keeps(k) && b.keeps(k)) ++c.first;
  }
  std::vector<LayerIou> out;
  for (std::size_t layer : model.conv_layers()) {
    auto it = counts.find(layer);
    if (it == counts.end()) continue;
    out.push_back(LayerIou{model.layer(layer).name,
                           static_cast<double>(it->second.first) / static_cast<double>(it->second.second)});
  }
  return out;
}

std::string mask_to_text(const ModelGraph& model, const CircuitMask& mask) {
  std::ostringstream os;
  os << kMaskMagic << '\n';
  os << "model " << mask.model_digest << '\n';
  os << "target " << to_string(mask.target) << '\n';
  os << "bias_mode " << to_string(mask.bias_mode) << '\n';
  os << "sparsity " << format_double(mask.sparsity) << '\n';
  os << "relevant " << mask.relevant_count << '\n';
  os << "criterion " << (mask.provenance.criterion.empty() ? "-" : mask.provenance.criterion) << '\n';
  os << "images " << (mask.provenance.image_digest.empty() ? "-" : mask.provenance.image_digest) << '\n';
  os << "kept " << mask.kept.size() << '\n';
  for (std::size_t k : mask.kept) {
    const KernelId id = model.kernel_id(k);
    os << id.layer << ' ' << id.out << ' ' << id.in << '\n';
  }
  return os.str();
}

CircuitMask mask_from_text(const ModelGraph& model, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMaskMagic) throw FormatError(std::string("mask text must start with '") + kMaskMagic + "'");
  std::map<std::string, std::string> header;
  const char* keys[] = {"model", "target", "bias_mode", "sparsity", "relevant", "criterion", "images", "kept"};
  for (const char* key : keys) {
    if (!std::getline(is, line)) throw FormatError(std::string("mask text ends before '") + key + "'");
    const auto space = line.find(' ');
    if (space == std::string::npos || line.substr(0, space) != key) {
      throw FormatError(std::string("expected mask header '") + key + "', got '" + line + "'");
    }
    header[key] = line.substr(space + 1);
  }
  CircuitMask m;
  try {
    m.model_digest = header["model"];
    m.target = parse_target(header["target"]);
    m.bias_mode = bias_mode_from_string(header["bias_mode"]);
    m.sparsity = std::stod(header["sparsity"]);
    m.relevant_count = std::stoull(header["relevant"]);
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("malformed mask header value: ") + e.what());
  }
  m.provenance.criterion = header["criterion"] == "-" ? "" : header["criterion"];
  m.provenance.image_digest = header["images"] == "-" ? "" : header["images"];
  if (m.model_digest != model.digest()) {
    throw ValidationError("mask was built for model " + m.model_digest.substr(0, 12) + ", not " +
                          model.digest().substr(0, 12));
  }
  std::size_t count = 0;
  try {
    count = std::stoull(header["kept"]);
  } catch (const std::logic_error&) {
    throw FormatError("malformed kept count");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw TruncatedError("mask text lists fewer kernels than its kept count");
    std::istringstream ls(line);
    KernelId id;
    if (!(ls >> id.layer >> id.out >> id.in)) throw FormatError("malformed kernel line '" + line + "'");
    kept.push_back(model.kernel_index(id));
  }
  while (std::getline(is, line)) {
    if (!line.empty()) throw FormatError("unexpected trailing line '" + line + "' in mask text");
  }
  CircuitMask checked = make_mask(model, m.target, std::move(kept), m.bias_mode);
  if (checked.relevant_count != m.relevant_count) {
    throw ValidationError("mask relevant count " + std::to_string(m.relevant_count) + " disagrees with model (" +
                          std::to_string(checked.relevant_count) + ")");
  }
  checked.sparsity = m.sparsity;
  checked.provenance = m.provenance;
  return checked;
}

void save_mask(const ModelGraph& model, const CircuitMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << mask_to_text(model, mask);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string mask_model_digest(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMaskMagic) throw FormatError(std::string("mask text must start with '") + kMaskMagic + "'");
  if (!std::getline(is, line) || line.rfind("model ", 0) != 0) throw FormatError("mask text lacks a model line");
  return line.substr(6);
}

CircuitMask load_mask(const ModelGraph& model, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file '" + path.string() + "'");
  return mask_from_text(model, std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

}  // namespace circuits
