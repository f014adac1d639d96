#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "circuits/evaluate.hpp"
#include "circuits/model.hpp"
#include "circuits/target.hpp"

namespace circuits {

enum class BiasMode { masked, pruned };

const char* to_string(BiasMode mode);
BiasMode bias_mode_from_string(const std::string& name);

struct MaskProvenance {
  std::string criterion;
  std::string image_digest;
  bool operator==(const MaskProvenance&) const = default;
};

/// Kept-kernel set of a circuit.
///
/// Only the target's relevant kernels are subject to the mask; every other
/// kernel runs untouched. In masked bias mode a filter whose kernels are
/// all masked still emits its bias; in pruned mode a relevant filter with
/// no live incoming kernel (transitively, from the input) emits nothing.
struct CircuitMask {
  std::vector<std::size_t> kept;  // flat kernel indices, ascending
  std::size_t relevant_count = 0;
  std::string model_digest;
  FeatureTarget target;
  BiasMode bias_mode = BiasMode::masked;
  double sparsity = 1.0;  // nominal: kept / relevant
  MaskProvenance provenance;

  bool keeps(std::size_t kernel) const;
  bool operator==(const CircuitMask&) const = default;
};

/// Builds a validated mask. Throws GraphError if a kernel is unknown or not
/// relevant to the target.
CircuitMask make_mask(const ModelGraph& model, const FeatureTarget& target, std::vector<std::size_t> kept,
                      BiasMode mode = BiasMode::masked);
CircuitMask keep_all(const ModelGraph& model, const FeatureTarget& target, BiasMode mode = BiasMode::masked);

/// Gates that realize the mask during evaluation.
GateSet make_gates(const ModelGraph& model, const CircuitMask& mask);

/// True iff some path of kept kernels links the input to a targeted channel.
bool check_connected(const ModelGraph& model, const CircuitMask& mask);

/// Drops kept kernels that cannot carry signal to the target: those whose
/// source channel is unreachable from a signal source or whose destination
/// cannot reach the target. Signal sources are the input channels and, in
/// masked bias mode, filters with a nonzero bias (they emit a constant map
/// even when all their kernels are masked). The result leaves the target
/// activations unchanged and is a fixed point.
CircuitMask remove_dead_ends(const ModelGraph& model, const CircuitMask& mask);

/// |kept after remove_dead_ends| / |relevant|; 0 for an empty relevant set.
double effective_sparsity(const ModelGraph& model, const CircuitMask& mask);

/// The same kept set evaluated with bias mode pruned.
CircuitMask prune_biases(const ModelGraph& model, const CircuitMask& mask);

/// remove_dead_ends, prune_biases, then remove_dead_ends again under pruned
/// semantics: exactly the kernels a diagram shows.
CircuitMask cleanup_for_diagram(const ModelGraph& model, const CircuitMask& mask);

struct LayerIou {
  std::string layer;
  double iou = 0;
  bool operator==(const LayerIou&) const = default;
};

/// Per conv layer |a ∩ b| / |a ∪ b|; layers with an empty union are
/// omitted. Throws ValidationError when the masks belong to different
/// models.
std::vector<LayerIou> iou_per_layer(const ModelGraph& model, const CircuitMask& a, const CircuitMask& b);

/// Text format: "key value" header lines, then one "layer out in" line per
/// kept kernel. See docs/report_schema.md.
std::string mask_to_text(const ModelGraph& model, const CircuitMask& mask);
/// Throws FormatError on malformed text, GraphError on unknown kernels and
/// ValidationError when the model digest does not match.
CircuitMask mask_from_text(const ModelGraph& model, const std::string& text);
/// Model digest named in a mask text, without validating the rest.
std::string mask_model_digest(const std::string& text);
void save_mask(const ModelGraph& model, const CircuitMask& mask, const std::filesystem::path& path);
CircuitMask load_mask(const ModelGraph& model, const std::filesystem::path& path);

}  // namespace circuits
