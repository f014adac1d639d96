#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "circuits/autodiff.hpp"
#include "circuits/model.hpp"

namespace circuits {

struct CircuitMask;

/// Per-layer kernel gates; entries for non-conv layers and ungated conv
/// layers are empty.
using GateSet = std::vector<std::optional<KernelGate>>;

/// Records the forward pass of one C x H x W image on `ctx` and returns the
/// value id of every layer output. With `until`, layers after that index in
/// topological order are skipped (their ids are left unset).
std::vector<ValueId> record_forward(EvalContext& ctx, const ModelGraph& model, const Tensor& image,
                                    const GateSet* gates = nullptr, std::optional<std::size_t> until = std::nullopt);

/// Output of one layer for one image, without gradient recording.
Tensor evaluate_layer(const ModelGraph& model, const Tensor& image, std::size_t layer,
                      const GateSet* gates = nullptr);

/// Every layer output for every image of a batch.
class ActivationTrace {
 public:
  std::size_t images() const noexcept { return contexts_.size(); }
  const Tensor& at(std::size_t image, std::size_t layer) const;
  EvalContext& context(std::size_t image) { return contexts_.at(image); }
  ValueId value_id(std::size_t image, std::size_t layer) const { return ids_.at(image).at(layer); }

 private:
  friend ActivationTrace forward_trace(const ModelGraph&, const Tensor&, const CircuitMask*, bool);
  std::vector<EvalContext> contexts_;
  std::vector<std::vector<ValueId>> ids_;
};

/// Forward pass over a N x C x H x W batch. With a mask, kernels outside
/// the kept set of the mask's relevant kernels contribute nothing; in
/// pruned bias mode dead filters are removed entirely. With
/// `record_gradients` each image's context accepts one backward call.
ActivationTrace forward_trace(const ModelGraph& model, const Tensor& batch, const CircuitMask* mask = nullptr,
                              bool record_gradients = false);

}  // namespace circuits
