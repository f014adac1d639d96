#include "circuits/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "circuits/error.hpp"
#include "circuits/evaluate.hpp"
#include "circuits/receptive_field.hpp"

namespace circuits {

namespace {

constexpr int kSubsamples = 4;

Point add(Point a, Point b) { return Point{a.x + b.x, a.y + b.y}; }
Point sub(Point a, Point b) { return Point{a.x - b.x, a.y - b.y}; }
Point scale(Point a, double s) { return Point{a.x * s, a.y * s}; }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

// Quarter turn counter-clockwise on screen (y grows downwards).
Point quarter_turn(Point p) { return Point{p.y, -p.x}; }

double segment_distance(Point p, const Segment& s) {
  const Point d = sub(s.b, s.a);
  const double len2 = dot(d, d);
  if (len2 == 0.0) return std::hypot(p.x - s.a.x, p.y - s.a.y);
  const double t = std::clamp(dot(sub(p, s.a), d) / len2, 0.0, 1.0);
  const Point q = add(s.a, scale(d, t));
  return std::hypot(p.x - q.x, p.y - q.y);
}

// Endpoints are offsets from the center.
double arc_distance(Point p, Point center, double radius, Point mid, Point start, Point end) {
  const Point v = sub(p, center);
  const double norm = std::hypot(v.x, v.y);
  if (dot(v, mid) >= std::numbers::sqrt2 / 2 * norm) return std::abs(norm - radius);
  return std::min(std::hypot(v.x - start.x, v.y - start.y), std::hypot(v.x - end.x, v.y - end.y));
}

Point spec_center(const ProbeSpec& spec) {
  if (spec.center) return *spec.center;
  return Point{static_cast<double>(spec.canvas_width) / 2, static_cast<double>(spec.canvas_height) / 2};
}

template <class Distance>
Tensor rasterize(const ProbeSpec& spec, Distance&& distance) {
  Tensor out(Shape{spec.channels, spec.canvas_height, spec.canvas_width}, spec.background);
  const double half = spec.stroke_width / 2;
  for (std::size_t i = 0; i < spec.canvas_height; ++i) {
    for (std::size_t j = 0; j < spec.canvas_width; ++j) {
      int ink = 0;
      for (int a = 0; a < kSubsamples; ++a) {
        for (int b = 0; b < kSubsamples; ++b) {
          const Point p{static_cast<double>(j) + (b + 0.5) / kSubsamples, static_cast<double>(i) + (a + 0.5) / kSubsamples};
          if (distance(p) <= half) ++ink;
        }
      }
      const double v = spec.background + (spec.foreground - spec.background) * ink / double(kSubsamples * kSubsamples);
      for (std::size_t c = 0; c < spec.channels; ++c) out.at(c, i, j) = v;
    }
  }
  return out;
}

void check_spec(const ProbeSpec& spec) {
  if (spec.canvas_height == 0 || spec.canvas_width == 0 || spec.channels == 0) {
    throw ValidationError("probe canvas must be non-empty");
  }
  if (!(spec.stroke_width > 0)) throw ValidationError("probe stroke width must be positive");
}

}  // namespace

const char* to_string(ProbeKind kind) { return kind == ProbeKind::arc ? "arc" : "corner"; }

ProbeKind probe_kind_from_string(const std::string& name) {
  if (name == "arc") return ProbeKind::arc;
  if (name == "corner") return ProbeKind::corner;
  throw ValidationError("unknown probe kind '" + name + "' (expected arc or corner)");
}

Point direction(double degrees) {
  double base = std::fmod(degrees, 90.0);
  if (base < 0) base += 90.0;
  const double turns = std::round((degrees - base) / 90.0);
  int q = static_cast<int>(std::fmod(turns, 4.0));
  if (q < 0) q += 4;
  const double rad = base * std::numbers::pi / 180.0;
  Point p = base == 0.0 ? Point{1.0, 0.0} : Point{std::cos(rad), -std::sin(rad)};
  for (int i = 0; i < q; ++i) p = quarter_turn(p);
  return p;
}

ProbeGeometry probe_geometry(const ProbeSpec& spec, double radius, double rotation) {
  if (!(radius >= 0)) throw ValidationError("probe radius must be non-negative");
  ProbeGeometry g;
  g.center = spec_center(spec);
  g.start = add(g.center, scale(direction(rotation - 45.0), radius));
  g.end = add(g.center, scale(direction(rotation + 45.0), radius));
  g.vertex = sub(add(g.start, g.end), g.center);
  return g;
}

std::vector<Segment> corner_segments(const ProbeSpec& spec, double radius, double rotation) {
  const ProbeGeometry g = probe_geometry(spec, radius, rotation);
  return {Segment{g.vertex, g.start}, Segment{g.vertex, g.end}};
}

Bounds probe_bounds(const ProbeSpec& spec, double radius, double rotation) {
  const ProbeGeometry g = probe_geometry(spec, radius, rotation);
  std::vector<Point> pts{g.start, g.end};
  if (spec.kind == ProbeKind::corner) {
    pts.push_back(g.vertex);
  } else {
    pts.push_back(add(g.center, scale(direction(rotation), radius)));
    // Axis extremes of the circle that fall inside the arc's sector.
    const Point mid = direction(rotation);
    for (const Point axis : {Point{1, 0}, Point{-1, 0}, Point{0, 1}, Point{0, -1}}) {
      if (dot(axis, mid) >= std::numbers::sqrt2 / 2) pts.push_back(add(g.center, scale(axis, radius)));
    }
  }
  Bounds b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
  for (const Point& p : pts) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  const double half = spec.stroke_width / 2;
  return Bounds{b.x0 - half, b.y0 - half, b.x1 + half, b.y1 + half};
}

Tensor render_segments(const ProbeSpec& spec, const std::vector<Segment>& segments) {
  check_spec(spec);
  return rasterize(spec, [&](Point p) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& s : segments) d = std::min(d, segment_distance(p, s));
    return d;
  });
}

Tensor generate_probe(const ProbeSpec& spec, double radius, double rotation) {
  check_spec(spec);
  const Bounds b = probe_bounds(spec, radius, rotation);
  if (b.x0 < 0 || b.y0 < 0 || b.x1 > static_cast<double>(spec.canvas_width) ||
      b.y1 > static_cast<double>(spec.canvas_height)) {
    throw ValidationError("probe (radius " + std::to_string(radius) + ", rotation " + std::to_string(rotation) +
                          ") exceeds the " + std::to_string(spec.canvas_height) + "x" +
                          std::to_string(spec.canvas_width) + " canvas");
  }
  if (spec.kind == ProbeKind::corner) return render_segments(spec, corner_segments(spec, radius, rotation));
  const Point center = spec_center(spec);
  const Point mid = direction(rotation);
  const Point start = scale(direction(rotation - 45.0), radius);
  const Point end = scale(direction(rotation + 45.0), radius);
  return rasterize(spec, [&](Point p) { return arc_distance(p, center, radius, mid, start, end); });
}

ActivationSurface activation_surface(const ModelGraph& model, const FeatureTarget& target, ProbeSpec spec,
                                     const CircuitMask* mask) {
  validate_target(model, target);
  if (target.kind != ObjectiveKind::spatial_unit || !target.position) {
    throw ValidationError("activation surfaces need a spatial-unit target with an explicit position");
  }
  const Shape& in = model.input_shape();
  spec.channels = in[0];
  if (spec.canvas_height != in[1] || spec.canvas_width != in[2]) {
    throw ValidationError("probe canvas " + std::to_string(spec.canvas_height) + "x" + std::to_string(spec.canvas_width) +
                          " does not match the model input " + in.to_string());
  }
  const std::size_t layer = model.layer_index(target.layer);
  const Rect rf = receptive_rect(model, layer, *target.position);
  if (!spec.center) {
    spec.center = Point{static_cast<double>(rf.left) + static_cast<double>(rf.width) / 2,
                        static_cast<double>(rf.top) + static_cast<double>(rf.height) / 2};
  }
  GateSet gates;
  if (mask) gates = make_gates(model, *mask);

  ActivationSurface s;
  s.target = target;
  s.radii = spec.radii;
  s.rotations = spec.rotations;
  s.provenance = mask ? "circuit" : "model";
  s.kept = mask ? mask->kept.size() : 0;
  for (double r : spec.radii) {
    std::vector<double> row;
    for (double phi : spec.rotations) {
      const Bounds b = probe_bounds(spec, r, phi);
      if (b.x0 < static_cast<double>(rf.left) || b.y0 < static_cast<double>(rf.top) ||
          b.x1 > static_cast<double>(rf.left + rf.width) || b.y1 > static_cast<double>(rf.top + rf.height)) {
        throw ValidationError("probe (radius " + std::to_string(r) + ", rotation " + std::to_string(phi) +
                              ") leaves the receptive field of the target unit");
      }
      const Tensor image = generate_probe(spec, r, phi);
      const Tensor a = evaluate_layer(model, image, layer, mask ? &gates : nullptr);
      row.push_back(a.at(target.channel, target.position->h, target.position->w));
    }
    s.values.push_back(std::move(row));
  }
  return s;
}

std::string surface_to_csv(const ActivationSurface& s) {
  std::ostringstream os;
  char buf[64];
  os << "radius";
  for (double phi : s.rotations) {
    std::snprintf(buf, sizeof buf, "%.17g", phi);
    os << ',' << buf;
  }
  os << '\n';
  for (std::size_t i = 0; i < s.radii.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.radii[i]);
    os << buf;
    for (double v : s.values[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace circuits
