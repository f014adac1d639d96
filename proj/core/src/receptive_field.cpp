#include "circuits/receptive_field.hpp"

#include <algorithm>
#include <vector>

#include "circuits/error.hpp"

namespace circuits {

namespace {

AxisField window(const AxisField& in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  const auto k = static_cast<std::int64_t>(kernel);
  const auto s = static_cast<std::int64_t>(stride);
  const auto p = static_cast<std::int64_t>(padding);
  return AxisField{in.jump * s, in.lo - p * in.jump, in.hi + (k - 1 - p) * in.jump};
}

}  // namespace

double ReceptiveField::center_h(std::size_t p) const noexcept {
  return static_cast<double>(static_cast<std::int64_t>(p) * h.jump) + 0.5 * static_cast<double>(h.lo + h.hi);
}

double ReceptiveField::center_w(std::size_t p) const noexcept {
  return static_cast<double>(static_cast<std::int64_t>(p) * w.jump) + 0.5 * static_cast<double>(w.lo + w.hi);
}

ReceptiveField receptive_field(const ModelGraph& model, std::size_t layer) {
  if (layer >= model.layer_count()) throw GraphError("layer index " + std::to_string(layer) + " out of range");
  std::vector<ReceptiveField> rf(layer + 1);
  for (std::size_t i = 0; i <= layer; ++i) {
    const LayerSpec& spec = model.layer(i);
    const auto& in = model.layer_inputs(i);
    switch (spec.kind) {
      case LayerKind::input:
        rf[i] = ReceptiveField{};
        break;
      case LayerKind::conv:
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        rf[i] = ReceptiveField{window(rf[in[0]].h, spec.kernel_h, spec.stride, spec.padding),
                               window(rf[in[0]].w, spec.kernel_w, spec.stride, spec.padding)};
        break;
      case LayerKind::relu:
        rf[i] = rf[in[0]];
        break;
      case LayerKind::add: {
        const ReceptiveField& a = rf[in[0]];
        const ReceptiveField& b = rf[in[1]];
        if (a.h.jump != b.h.jump || a.w.jump != b.w.jump) {
          throw GraphError("add layer '" + spec.name + "' joins branches with different strides");
        }
        rf[i] = ReceptiveField{AxisField{a.h.jump, std::min(a.h.lo, b.h.lo), std::max(a.h.hi, b.h.hi)},
                               AxisField{a.w.jump, std::min(a.w.lo, b.w.lo), std::max(a.w.hi, b.w.hi)}};
        break;
      }
      case LayerKind::flatten:
      case LayerKind::linear:
        if (i == layer) {
          throw GraphError("layer '" + spec.name + "' has no spatial positions; receptive fields need C x H x W maps");
        }
        break;
    }
  }
  return rf[layer];
}

Rect receptive_rect_unclamped(const ModelGraph& model, std::size_t layer, Position position) {
  const Shape& s = model.output_shape(layer);
  if (s.rank() != 3 || position.h >= s[1] || position.w >= s[2]) {
    throw GraphError("position outside the map of layer '" + model.layer(layer).name + "'");
  }
  const ReceptiveField rf = receptive_field(model, layer);
  const auto ph = static_cast<std::int64_t>(position.h);
  const auto pw = static_cast<std::int64_t>(position.w);
  return Rect{ph * rf.h.jump + rf.h.lo, pw * rf.w.jump + rf.w.lo, rf.h.size(), rf.w.size()};
}

Rect receptive_rect(const ModelGraph& model, std::size_t layer, Position position) {
  const Rect r = receptive_rect_unclamped(model, layer, position);
  const auto height = static_cast<std::int64_t>(model.input_shape()[1]);
  const auto width = static_cast<std::int64_t>(model.input_shape()[2]);
  const std::int64_t top = std::clamp<std::int64_t>(r.top, 0, height - 1);
  const std::int64_t left = std::clamp<std::int64_t>(r.left, 0, width - 1);
  const std::int64_t bottom = std::clamp<std::int64_t>(r.top + r.height - 1, top, height - 1);
  const std::int64_t right = std::clamp<std::int64_t>(r.left + r.width - 1, left, width - 1);
  return Rect{top, left, bottom - top + 1, right - left + 1};
}

}  // namespace circuits
