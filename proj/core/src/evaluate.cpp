#include "circuits/evaluate.hpp"

#include <limits>

#include "circuits/circuit.hpp"
#include "circuits/error.hpp"

namespace circuits {

std::vector<ValueId> record_forward(EvalContext& ctx, const ModelGraph& model, const Tensor& image,
                                    const GateSet* gates, std::optional<std::size_t> until) {
  if (image.shape() != model.input_shape()) {
    throw ShapeError("input", "image shape " + image.shape().to_string() + " does not match model input " +
                                  model.input_shape().to_string());
  }
  if (gates && gates->size() != model.layer_count()) {
    throw ValidationError("gate set covers " + std::to_string(gates->size()) + " layers, model has " +
                          std::to_string(model.layer_count()));
  }
  const std::size_t last = until ? *until : model.layer_count() - 1;
  std::vector<ValueId> ids(model.layer_count(), std::numeric_limits<ValueId>::max());
  for (std::size_t i = 0; i <= last && i < model.layer_count(); ++i) {
    const LayerSpec& spec = model.layer(i);
    const auto& in = model.layer_inputs(i);
    switch (spec.kind) {
      case LayerKind::input:
        ids[i] = ctx.input(image);
        break;
      case LayerKind::conv: {
        const LayerParams& p = model.params(i);
        const KernelGate* gate = (gates && (*gates)[i]) ? &*(*gates)[i] : nullptr;
        ids[i] = ctx.conv2d(ids[in[0]], i, p.weights, p.bias, conv_geometry(spec), gate);
        break;
      }
      case LayerKind::relu:
        ids[i] = ctx.relu(ids[in[0]]);
        break;
      case LayerKind::maxpool:
        ids[i] = ctx.max_pool(ids[in[0]], pool_geometry(spec));
        break;
      case LayerKind::avgpool:
        ids[i] = ctx.avg_pool(ids[in[0]], pool_geometry(spec));
        break;
      case LayerKind::flatten:
        ids[i] = ctx.flatten(ids[in[0]]);
        break;
      case LayerKind::linear: {
        const LayerParams& p = model.params(i);
        ids[i] = ctx.linear(ids[in[0]], i, p.weights, p.bias);
        break;
      }
      case LayerKind::add:
        ids[i] = ctx.add(ids[in[0]], ids[in[1]]);
        break;
    }
  }
  return ids;
}

Tensor evaluate_layer(const ModelGraph& model, const Tensor& image, std::size_t layer, const GateSet* gates) {
  EvalContext ctx(false);
  const auto ids = record_forward(ctx, model, image, gates, layer);
  return ctx.value(ids[layer]);
}

const Tensor& ActivationTrace::at(std::size_t image, std::size_t layer) const {
  return contexts_.at(image).value(ids_.at(image).at(layer));
}

ActivationTrace forward_trace(const ModelGraph& model, const Tensor& batch, const CircuitMask* mask,
                              bool record_gradients) {
  if (batch.shape().rank() != 4) {
    throw ShapeError("batch", "batch must be N x C x H x W, got " + batch.shape().to_string());
  }
  GateSet gates;
  if (mask) gates = make_gates(model, *mask);
  ActivationTrace trace;
  const std::size_t n = batch.shape()[0];
  trace.contexts_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    trace.contexts_.emplace_back(record_gradients);
    trace.ids_.push_back(record_forward(trace.contexts_.back(), model, batch.slice(i), mask ? &gates : nullptr));
  }
  return trace;
}

}  // namespace circuits
