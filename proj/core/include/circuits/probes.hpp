#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "circuits/circuit.hpp"
#include "circuits/model.hpp"
#include "circuits/target.hpp"

namespace circuits {

enum class ProbeKind { arc, corner };
const char* to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(const std::string& name);

/// Point in continuous image coordinates: x to the right, y downwards,
/// pixel (i, j) covering [j, j+1) x [i, i+1).
struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

struct Segment {
  Point a;
  Point b;
  bool operator==(const Segment&) const = default;
};

/// Probe family. Rotations are in degrees, counter-clockwise on screen
/// from the +x axis. An arc spans rotation +- 45 degrees on a circle of the
/// given radius around `center`; the matching corner is the right angle
/// formed by the circle's tangents at the arc's endpoints.
struct ProbeSpec {
  ProbeKind kind = ProbeKind::arc;
  std::vector<double> radii;
  std::vector<double> rotations;
  double stroke_width = 1.0;
  std::size_t canvas_height = 16;
  std::size_t canvas_width = 16;
  std::size_t channels = 1;
  double foreground = 1.0;
  double background = 0.0;
  std::optional<Point> center;  // defaults to the canvas center
};

/// Exact unit direction for angles that are multiples of 90 degrees apart:
/// when a + 90 is exact in floating point, direction(a + 90) is
/// direction(a) rotated a quarter turn bit-for-bit.
Point direction(double degrees);

/// Arc endpoints (rotation - 45, rotation + 45) and the corner vertex.
struct ProbeGeometry {
  Point center;
  Point start;
  Point end;
  Point vertex;
};
ProbeGeometry probe_geometry(const ProbeSpec& spec, double radius, double rotation);

/// The two edges of a corner probe: vertex -> start and vertex -> end.
std::vector<Segment> corner_segments(const ProbeSpec& spec, double radius, double rotation);

/// Axis-aligned bounds of the stroked stimulus: [x0, x1] x [y0, y1].
struct Bounds {
  double x0, y0, x1, y1;
};
Bounds probe_bounds(const ProbeSpec& spec, double radius, double rotation);

/// Anti-aliased rendering by 4 x 4 subpixel coverage; a subsample is ink
/// when it lies within stroke_width / 2 of any segment.
Tensor render_segments(const ProbeSpec& spec, const std::vector<Segment>& segments);

/// Renders one stimulus as a channels x H x W image. Throws ValidationError
/// when the stroked stimulus leaves the canvas.
Tensor generate_probe(const ProbeSpec& spec, double radius, double rotation);

struct ActivationSurface {
  FeatureTarget target;
  std::vector<double> radii;
  std::vector<double> rotations;
  std::vector<std::vector<double>> values;  // [radius][rotation]
  std::string provenance;                    // "model" or "circuit"
  std::size_t kept = 0;                      // circuit kernels, 0 for the model
};

/// Activation of a spatial-unit target over the radius x rotation grid.
/// The spec's canvas must match the model input; its center defaults to
/// the unit's receptive-field center. Every stimulus must lie inside the
/// unit's receptive field (ValidationError otherwise).
ActivationSurface activation_surface(const ModelGraph& model, const FeatureTarget& target, ProbeSpec spec,
                                     const CircuitMask* mask = nullptr);

/// CSV with one row per radius and one column per rotation.
std::string surface_to_csv(const ActivationSurface& surface);

}  // namespace circuits
