#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "circuits/model.hpp"
#include "circuits/target.hpp"

namespace circuits {

/// Channel-level view of a model: one node per (layer, channel) of every
/// C x H x W layer and a single node for rank-1 layers. Conv kernels are
/// edges (input layer, c_in) -> (conv, c_out); relu and pooling are
/// channelwise pass-through edges, add merges channelwise, flatten and
/// linear connect every input node to their single node.
class ChannelGraph {
 public:
  static constexpr std::size_t kNoKernel = std::numeric_limits<std::size_t>::max();

  struct Edge {
    std::size_t from;
    std::size_t to;
    std::size_t kernel;  // flat kernel index or kNoKernel
  };

  explicit ChannelGraph(const ModelGraph& model);

  std::size_t node_count() const noexcept { return node_layer_.size(); }
  std::size_t node(std::size_t layer, std::size_t channel) const;
  std::size_t node_layer(std::size_t node) const { return node_layer_.at(node); }
  std::size_t node_channel(std::size_t node) const { return node_channel_.at(node); }
  std::size_t layer_nodes(std::size_t layer) const { return layer_count_.at(layer); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<std::size_t>& out_edges(std::size_t node) const { return out_.at(node); }
  const std::vector<std::size_t>& in_edges(std::size_t node) const { return in_.at(node); }
  /// Edge index of a flat kernel.
  std::size_t kernel_edge(std::size_t kernel) const { return kernel_edge_.at(kernel); }

  using EdgeFilter = std::function<bool(const Edge&)>;
  /// Nodes reachable from `sources` along edges accepted by `allow`.
  std::vector<char> forward_reach(const std::vector<std::size_t>& sources, const EdgeFilter& allow) const;
  /// Nodes from which some node of `sinks` is reachable.
  std::vector<char> backward_reach(const std::vector<std::size_t>& sinks, const EdgeFilter& allow) const;

  std::vector<std::size_t> input_nodes() const;

 private:
  std::vector<std::size_t> first_node_;
  std::vector<std::size_t> layer_count_;
  std::vector<std::size_t> node_layer_;
  std::vector<std::size_t> node_channel_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<std::size_t> kernel_edge_;
};

/// Nodes of the target layer that the objective reads.
std::vector<std::size_t> target_nodes(const ModelGraph& model, const ChannelGraph& graph,
                                      const FeatureTarget& target);

/// Flat indices (ascending) of kernels on some directed path from the model
/// input to a targeted channel.
std::vector<std::size_t> relevant_kernel_indices(const ModelGraph& model, const FeatureTarget& target);
std::vector<KernelId> relevant_kernels(const ModelGraph& model, const FeatureTarget& target);

}  // namespace circuits
