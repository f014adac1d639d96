#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuits/circuit.hpp"
#include "circuits/model.hpp"
#include "circuits/saliency.hpp"

namespace circuits {

inline constexpr double kMinPenWidth = 0.5;
inline constexpr double kMaxPenWidth = 5.0;

enum class VertexRole { input, filter, target };
enum class EdgeSign { positive, negative };
const char* to_string(VertexRole role);
const char* to_string(EdgeSign sign);

/// A filter node: the output channel of a conv layer, an input channel, or
/// a channel of an add layer. Channel-wise layers (ReLU, pooling) fold into
/// the filter that feeds them.
struct DiagramVertex {
  std::string id;  // "layer:channel"
  std::string layer;
  std::size_t channel = 0;
  std::size_t rank = 0;  // layout rank: position of the layer among ranked layers
  VertexRole role = VertexRole::filter;
  bool kept = false;  // incident to at least one edge
};

struct DiagramEdge {
  std::string from;
  std::string to;
  KernelId kernel;
  double saliency = 0;
  double pen_width = kMinPenWidth;
  EdgeSign sign = EdgeSign::positive;
};

struct DiagramGraph {
  std::string model_digest;
  FeatureTarget target;
  BiasMode bias_mode = BiasMode::pruned;
  std::string saliency_criterion;
  std::vector<DiagramVertex> vertices;  // by rank, then layer, then channel
  std::vector<DiagramEdge> edges;       // by flat kernel index
};

/// Diagram of the kernels left by cleanup_for_diagram. Edge pen widths
/// min-max normalize the saliency over the diagram's edges onto
/// [0.5, 5.0] (all 5.0 when every saliency is equal); the sign is that of
/// the kernel's mean weight (zero counts as positive). Without a saliency
/// map, kernel magnitudes are used. Throws ValidationError when nothing
/// survives cleanup or the saliency map belongs to another model/target.
DiagramGraph build_diagram(const ModelGraph& model, const CircuitMask& mask, const SaliencyMap* saliency = nullptr);

std::string diagram_to_dot(const DiagramGraph& graph);
nlohmann::json diagram_to_json(const DiagramGraph& graph);

}  // namespace circuits
