#include "circuits/connectivity.hpp"

#include <deque>

#include "circuits/error.hpp"

namespace circuits {

ChannelGraph::ChannelGraph(const ModelGraph& model) {
  const std::size_t n = model.layer_count();
  first_node_.resize(n);
  layer_count_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Shape& s = model.output_shape(i);
    first_node_[i] = node_layer_.size();
    layer_count_[i] = s.rank() == 3 ? s[0] : 1;
    for (std::size_t c = 0; c < layer_count_[i]; ++c) {
      node_layer_.push_back(i);
      node_channel_.push_back(c);
    }
  }
  kernel_edge_.assign(model.kernel_count(), kNoKernel);
  auto add_edge = [&](std::size_t from, std::size_t to, std::size_t kernel) {
    if (kernel != kNoKernel) kernel_edge_[kernel] = edges_.size();
    edges_.push_back(Edge{from, to, kernel});
  };
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& spec = model.layer(i);
    const auto& in = model.layer_inputs(i);
    switch (spec.kind) {
      case LayerKind::input:
        break;
      case LayerKind::conv: {
        const Shape& w = model.params(i).weights.shape();
        for (std::size_t co = 0; co < w[0]; ++co) {
          for (std::size_t ci = 0; ci < w[1]; ++ci) {
            add_edge(node(in[0], ci), node(i, co), model.kernel_index(i, co, ci));
          }
        }
        break;
      }
      case LayerKind::relu:
      case LayerKind::maxpool:
      case LayerKind::avgpool:
      case LayerKind::add:
        for (std::size_t src : in) {
          for (std::size_t c = 0; c < layer_count_[i]; ++c) add_edge(node(src, c), node(i, c), kNoKernel);
        }
        break;
      case LayerKind::flatten:
      case LayerKind::linear:
        for (std::size_t c = 0; c < layer_count_[in[0]]; ++c) add_edge(node(in[0], c), node(i, 0), kNoKernel);
        break;
    }
  }
  out_.resize(node_layer_.size());
  in_.resize(node_layer_.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    out_[edges_[e].from].push_back(e);
    in_[edges_[e].to].push_back(e);
  }
}

std::size_t ChannelGraph::node(std::size_t layer, std::size_t channel) const {
  if (layer >= first_node_.size() || channel >= layer_count_[layer]) {
    throw GraphError("no channel node (" + std::to_string(layer) + "," + std::to_string(channel) + ")");
  }
  return first_node_[layer] + channel;
}

std::vector<std::size_t> ChannelGraph::input_nodes() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < layer_count_[0]; ++c) out.push_back(first_node_[0] + c);
  return out;
}

std::vector<char> ChannelGraph::forward_reach(const std::vector<std::size_t>& sources, const EdgeFilter& allow) const {
  std::vector<char> seen(node_count(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t s : sources) {
    if (!seen[s]) {
      seen[s] = 1;
      queue.push_back(s);
    }
  }
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t e : out_[u]) {
      const Edge& edge = edges_[e];
      if (seen[edge.to] || !allow(edge)) continue;
      seen[edge.to] = 1;
      queue.push_back(edge.to);
    }
  }
  return seen;
}

std::vector<char> ChannelGraph::backward_reach(const std::vector<std::size_t>& sinks, const EdgeFilter& allow) const {
  std::vector<char> seen(node_count(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t s : sinks) {
    if (!seen[s]) {
      seen[s] = 1;
      queue.push_back(s);
    }
  }
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t e : in_[u]) {
      const Edge& edge = edges_[e];
      if (seen[edge.from] || !allow(edge)) continue;
      seen[edge.from] = 1;
      queue.push_back(edge.from);
    }
  }
  return seen;
}

std::vector<std::size_t> target_nodes(const ModelGraph& model, const ChannelGraph& graph, const FeatureTarget& target) {
  const std::size_t layer = model.layer_index(target.layer);
  std::vector<std::size_t> out;
  for (std::size_t c : target_channels(model, target)) out.push_back(graph.node(layer, c));
  return out;
}

std::vector<std::size_t> relevant_kernel_indices(const ModelGraph& model, const FeatureTarget& target) {
  const ChannelGraph graph(model);
  const auto any = [](const ChannelGraph::Edge&) { return true; };
  const auto from_input = graph.forward_reach(graph.input_nodes(), any);
  const auto to_target = graph.backward_reach(target_nodes(model, graph, target), any);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < model.kernel_count(); ++k) {
    const auto& e = graph.edges()[graph.kernel_edge(k)];
    if (from_input[e.from] && to_target[e.to]) out.push_back(k);
  }
  return out;
}

std::vector<KernelId> relevant_kernels(const ModelGraph& model, const FeatureTarget& target) {
  std::vector<KernelId> out;
  for (std::size_t k : relevant_kernel_indices(model, target)) out.push_back(model.kernel_id(k));
  return out;
}

}  // namespace circuits
