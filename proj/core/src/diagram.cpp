#include "circuits/diagram.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "circuits/error.hpp"

namespace circuits {

namespace {

bool channel_wise(LayerKind kind) {
  return kind == LayerKind::relu || kind == LayerKind::maxpool || kind == LayerKind::avgpool;
}

// Layer whose channels a diagram shows for `layer`.
std::size_t owner_layer(const ModelGraph& model, std::size_t layer) {
  while (channel_wise(model.layer(layer).kind)) layer = model.layer_inputs(layer).at(0);
  return layer;
}

std::string vertex_id(const ModelGraph& model, std::size_t layer, std::size_t channel) {
  return model.layer(layer).name + ":" + std::to_string(channel);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

const char* to_string(VertexRole role) {
  switch (role) {
    case VertexRole::input: return "input";
    case VertexRole::filter: return "filter";
    case VertexRole::target: return "target";
  }
  return "?";
}

const char* to_string(EdgeSign sign) { return sign == EdgeSign::positive ? "positive" : "negative"; }

DiagramGraph build_diagram(const ModelGraph& model, const CircuitMask& mask, const SaliencyMap* saliency) {
  if (mask.model_digest != model.digest()) throw ValidationError("mask belongs to a different model");
  if (saliency) {
    if (saliency->model_digest != mask.model_digest) throw ValidationError("saliency map belongs to a different model");
    if (!(saliency->target == mask.target)) throw ValidationError("saliency map was computed for a different target");
  }
  const CircuitMask clean = cleanup_for_diagram(model, mask);
  if (clean.kept.empty()) {
    throw ValidationError("the circuit for " + to_string(mask.target) + " is empty after dead-end removal at sparsity " +
                          fmt(mask.sparsity) + "; increase the sparsity (keep more kernels)");
  }

  DiagramGraph g;
  g.model_digest = mask.model_digest;
  g.target = mask.target;
  g.bias_mode = clean.bias_mode;
  g.saliency_criterion = saliency ? to_string(saliency->criterion) : "magnitude";

  // Ranks: input, then every conv/add layer in topological order.
  std::map<std::size_t, std::size_t> rank;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const LayerKind k = model.layer(l).kind;
    if (k == LayerKind::input || k == LayerKind::conv || k == LayerKind::add) rank.emplace(l, rank.size());
  }

  struct VKey {
    std::size_t rank, layer, channel;
    auto operator<=>(const VKey&) const = default;
  };
  std::map<VKey, DiagramVertex> vertices;
  auto touch = [&](std::size_t layer, std::size_t channel, VertexRole role, bool kept) {
    const VKey key{rank.at(layer), layer, channel};
    auto [it, inserted] = vertices.try_emplace(key);
    DiagramVertex& v = it->second;
    if (inserted) {
      v.id = vertex_id(model, layer, channel);
      v.layer = model.layer(layer).name;
      v.channel = channel;
      v.rank = key.rank;
      v.role = role;
    }
    if (role == VertexRole::target) v.role = role;
    v.kept = v.kept || kept;
  };

  const std::size_t in_layer = model.input_layer();
  for (std::size_t c = 0; c < model.input_shape()[0]; ++c) touch(in_layer, c, VertexRole::input, false);
  const std::size_t target_layer = owner_layer(model, model.layer_index(mask.target.layer));
  for (std::size_t c : target_channels(model, mask.target)) touch(target_layer, c, VertexRole::target, false);

  std::vector<double> scores;
  for (std::size_t k : clean.kept) {
    const auto loc = model.locate_kernel(k);
    const std::size_t src_layer = owner_layer(model, model.layer_inputs(loc.layer).at(0));
    DiagramEdge e;
    e.kernel = model.kernel_id(k);
    e.from = vertex_id(model, src_layer, loc.in);
    e.to = vertex_id(model, loc.layer, loc.out);
    const Tensor& w = model.params(loc.layer).weights;
    const std::size_t area = w.shape()[2] * w.shape()[3];
    const std::size_t base = (loc.out * w.shape()[1] + loc.in) * area;
    double sum = 0, abs_sum = 0;
    for (std::size_t p = 0; p < area; ++p) {
      sum += w[base + p];
      abs_sum += std::abs(w[base + p]);
    }
    e.sign = sum < 0 ? EdgeSign::negative : EdgeSign::positive;
    e.saliency = saliency ? saliency->score(k) : abs_sum / static_cast<double>(area);
    scores.push_back(e.saliency);
    touch(src_layer, loc.in, src_layer == in_layer ? VertexRole::input : VertexRole::filter, true);
    touch(loc.layer, loc.out, VertexRole::filter, true);
    g.edges.push_back(std::move(e));
  }

  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double min = *lo, max = *hi;
  for (auto& e : g.edges) {
    e.pen_width = max == min ? kMaxPenWidth
                             : kMinPenWidth + (kMaxPenWidth - kMinPenWidth) * ((e.saliency - min) / (max - min));
  }
  for (auto& [key, v] : vertices) g.vertices.push_back(std::move(v));
  return g;
}

std::string diagram_to_dot(const DiagramGraph& g) {
  std::ostringstream os;
  os << "digraph circuit {\n";
  os << "  rankdir=LR;\n";
  os << "  label=" << quoted("circuit for " + to_string(g.target)) << ";\n";
  os << "  node [shape=circle, fontsize=10];\n";
  std::size_t current = static_cast<std::size_t>(-1);
  bool open = false;
  for (const auto& v : g.vertices) {
    if (v.rank != current) {
      if (open) os << "  }\n";
      os << "  subgraph " << quoted("rank_" + std::to_string(v.rank)) << " {\n    rank=same;\n";
      current = v.rank;
      open = true;
    }
    os << "    " << quoted(v.id) << " [label=" << quoted(v.id) << ", role=" << to_string(v.role)
       << ", layer=" << quoted(v.layer) << ", kept=" << (v.kept ? "true" : "false");
    if (v.role == VertexRole::target) os << ", style=filled, fillcolor=" << quoted("#ffd27f");
    os << "];\n";
  }
  if (open) os << "  }\n";
  for (const auto& e : g.edges) {
    os << "  " << quoted(e.from) << " -> " << quoted(e.to) << " [penwidth=" << fmt(e.pen_width)
       << ", color=" << (e.sign == EdgeSign::positive ? "blue" : "red") << ", sign=" << to_string(e.sign)
       << ", saliency=" << quoted(fmt(e.saliency)) << ", kernel=" << quoted(e.kernel.layer + ":" +
                                                                          std::to_string(e.kernel.out) + ":" +
                                                                          std::to_string(e.kernel.in))
       << "];\n";
  }
  os << "}\n";
  return os.str();
}

nlohmann::json diagram_to_json(const DiagramGraph& g) {
  nlohmann::json vertices = nlohmann::json::array();
  for (const auto& v : g.vertices) {
    vertices.push_back({{"id", v.id},
                        {"layer", v.layer},
                        {"channel", v.channel},
                        {"rank", v.rank},
                        {"role", to_string(v.role)},
                        {"kept", v.kept}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) {
    edges.push_back({{"from", e.from},
                     {"to", e.to},
                     {"kernel", {{"layer", e.kernel.layer}, {"out", e.kernel.out}, {"in", e.kernel.in}}},
                     {"saliency", e.saliency},
                     {"pen_width", e.pen_width},
                     {"sign", to_string(e.sign)}});
  }
  return nlohmann::json{
      {"schema", "circuits.diagram"},
      {"version", 1},
      {"model_digest", g.model_digest},
      {"target", to_string(g.target)},
      {"bias_mode", to_string(g.bias_mode)},
      {"saliency_criterion", g.saliency_criterion},
      {"vertex_count", g.vertices.size()},
      {"edge_count", g.edges.size()},
      {"vertices", std::move(vertices)},
      {"edges", std::move(edges)},
  };
}

}  // namespace circuits
