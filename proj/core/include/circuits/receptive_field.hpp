#pragma once

#include <cstddef>
#include <cstdint>

#include "circuits/model.hpp"
#include "circuits/target.hpp"

namespace circuits {

/// Input rows (or columns) seen by position p of a layer along one axis:
/// [p * jump + lo, p * jump + hi]. `lo` is negative where padding reaches
/// outside the image.
struct AxisField {
  std::int64_t jump = 1;
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  std::int64_t size() const noexcept { return hi - lo + 1; }
  bool operator==(const AxisField&) const = default;
};

struct ReceptiveField {
  AxisField h;
  AxisField w;

  std::int64_t size_h() const noexcept { return h.size(); }
  std::int64_t size_w() const noexcept { return w.size(); }
  std::int64_t jump_h() const noexcept { return h.jump; }
  std::int64_t jump_w() const noexcept { return w.jump; }
  /// Input-space center of position p.
  double center_h(std::size_t p) const noexcept;
  double center_w(std::size_t p) const noexcept;
};

/// Rectangle in input pixels; `height`/`width` are at least 1 once clamped.
struct Rect {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  bool operator==(const Rect&) const = default;
};

/// Receptive field of a C x H x W layer. Throws GraphError for rank-1
/// layers and for residual adds whose branches have different jumps.
ReceptiveField receptive_field(const ModelGraph& model, std::size_t layer);

/// Rectangle of input pixels feeding `position` of `layer`, unclamped.
Rect receptive_rect_unclamped(const ModelGraph& model, std::size_t layer, Position position);
/// The same rectangle clamped to the image.
Rect receptive_rect(const ModelGraph& model, std::size_t layer, Position position);

}  // namespace circuits
