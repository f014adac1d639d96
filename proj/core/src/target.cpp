#include "circuits/target.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "circuits/error.hpp"
#include "circuits/evaluate.hpp"

namespace circuits {

namespace {

constexpr double kUnitTolerance = 1e-6;

std::size_t parse_index(const std::string& text, const std::string& whole) {
  std::size_t v = 0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc{} || p != end) {
    throw ValidationError("malformed target '" + whole + "': '" + text + "' is not an index");
  }
  return v;
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

const char* to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::sum_abs_map:
      return "sum_abs_map";
    case ObjectiveKind::spatial_unit:
      return "spatial_unit";
    case ObjectiveKind::direction:
      return "direction";
  }
  return "unknown";
}

FeatureTarget FeatureTarget::sum_abs(std::string layer, std::size_t channel) {
  FeatureTarget t;
  t.layer = std::move(layer);
  t.channel = channel;
  return t;
}

FeatureTarget FeatureTarget::unit(std::string layer, std::size_t channel, Position position) {
  FeatureTarget t;
  t.layer = std::move(layer);
  t.kind = ObjectiveKind::spatial_unit;
  t.channel = channel;
  t.position = position;
  return t;
}

FeatureTarget FeatureTarget::unit_at_max(std::string layer, std::size_t channel) {
  FeatureTarget t;
  t.layer = std::move(layer);
  t.kind = ObjectiveKind::spatial_unit;
  t.channel = channel;
  t.at_max = true;
  return t;
}

FeatureTarget FeatureTarget::along(std::string layer, std::vector<double> direction) {
  FeatureTarget t;
  t.layer = std::move(layer);
  t.kind = ObjectiveKind::direction;
  t.direction = std::move(direction);
  return t;
}

std::string to_string(const FeatureTarget& t) {
  std::ostringstream os;
  os.precision(17);
  os << t.layer << ':';
  switch (t.kind) {
    case ObjectiveKind::sum_abs_map:
      os << t.channel;
      break;
    case ObjectiveKind::spatial_unit:
      os << t.channel << '@';
      if (t.at_max) {
        os << "max";
      } else if (t.position) {
        os << t.position->h << ',' << t.position->w;
      }
      break;
    case ObjectiveKind::direction:
      os << "dir=";
      for (std::size_t i = 0; i < t.direction.size(); ++i) os << (i ? "," : "") << t.direction[i];
      break;
  }
  return os.str();
}

FeatureTarget parse_target(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ValidationError("malformed target '" + text + "': expected LAYER:CHANNEL[@H,W|@max] or LAYER:dir=...");
  }
  const std::string layer = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  if (rest.rfind("dir=", 0) == 0) {
    std::vector<double> dir;
    std::stringstream ss(rest.substr(4));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        dir.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ValidationError("malformed target '" + text + "': bad direction component '" + item + "'");
      }
    }
    if (dir.empty()) throw ValidationError("malformed target '" + text + "': empty direction");
    return FeatureTarget::along(layer, std::move(dir));
  }
  const auto at = rest.find('@');
  const std::size_t channel = parse_index(rest.substr(0, at), text);
  if (at == std::string::npos) return FeatureTarget::sum_abs(layer, channel);
  const std::string where = rest.substr(at + 1);
  if (where == "max") return FeatureTarget::unit_at_max(layer, channel);
  const auto comma = where.find(',');
  if (comma == std::string::npos) {
    throw ValidationError("malformed target '" + text + "': position must be H,W or max");
  }
  return FeatureTarget::unit(layer, channel,
                             Position{parse_index(where.substr(0, comma), text), parse_index(where.substr(comma + 1), text)});
}

void to_json(nlohmann::json& j, const FeatureTarget& t) {
  j = nlohmann::json{{"layer", t.layer}, {"objective", to_string(t.kind)}, {"spec", to_string(t)}};
  if (t.kind != ObjectiveKind::direction) j["channel"] = t.channel;
  if (t.kind == ObjectiveKind::spatial_unit) {
    j["at_max"] = t.at_max;
    if (t.position) j["position"] = {t.position->h, t.position->w};
  }
  if (t.kind == ObjectiveKind::direction) j["direction"] = t.direction;
}

void from_json(const nlohmann::json& j, FeatureTarget& t) {
  if (j.is_string()) {
    t = parse_target(j.get<std::string>());
    return;
  }
  try {
    t = FeatureTarget{};
    t.layer = j.at("layer").get<std::string>();
    const std::string kind = j.value("objective", std::string("sum_abs_map"));
    if (kind == "sum_abs_map") {
      t.kind = ObjectiveKind::sum_abs_map;
    } else if (kind == "spatial_unit") {
      t.kind = ObjectiveKind::spatial_unit;
    } else if (kind == "direction") {
      t.kind = ObjectiveKind::direction;
    } else {
      throw ValidationError("unknown objective '" + kind + "'");
    }
    t.channel = j.value("channel", std::size_t{0});
    t.at_max = j.value("at_max", false);
    if (j.contains("position")) t.position = Position{j["position"].at(0).get<std::size_t>(), j["position"].at(1).get<std::size_t>()};
    t.direction = j.value("direction", std::vector<double>{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed target object: ") + e.what());
  }
}

void validate_target(const ModelGraph& model, const FeatureTarget& t) {
  const std::size_t index = model.layer_index(t.layer);
  const Shape& s = model.output_shape(index);
  if (s.rank() != 3) {
    throw GraphError("target layer '" + t.layer + "' has output " + s.to_string() + "; targets need C x H x W maps");
  }
  if (t.kind == ObjectiveKind::direction) {
    if (t.direction.size() != s[0]) {
      throw GraphError("direction has " + std::to_string(t.direction.size()) + " components, layer '" + t.layer +
                       "' has " + std::to_string(s[0]) + " channels");
    }
    double norm2 = 0;
    for (double v : t.direction) {
      if (!std::isfinite(v)) throw GraphError("direction has a non-finite component");
      norm2 += v * v;
    }
    if (std::abs(std::sqrt(norm2) - 1.0) > kUnitTolerance) {
      throw GraphError("direction must have unit L2 norm, got " + std::to_string(std::sqrt(norm2)));
    }
    return;
  }
  if (t.channel >= s[0]) {
    throw GraphError("channel " + std::to_string(t.channel) + " out of range for layer '" + t.layer + "' with " +
                     std::to_string(s[0]) + " channels");
  }
  if (t.kind == ObjectiveKind::spatial_unit) {
    if (!t.at_max && !t.position) throw GraphError("spatial target needs a position or @max");
    if (t.position && (t.position->h >= s[1] || t.position->w >= s[2])) {
      throw GraphError("position (" + std::to_string(t.position->h) + "," + std::to_string(t.position->w) +
                       ") outside the " + std::to_string(s[1]) + "x" + std::to_string(s[2]) + " map of '" +
                       t.layer + "'");
    }
  }
}

std::vector<std::size_t> target_channels(const ModelGraph& model, const FeatureTarget& t) {
  validate_target(model, t);
  if (t.kind != ObjectiveKind::direction) return {t.channel};
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < t.direction.size(); ++c) {
    if (t.direction[c] != 0.0) out.push_back(c);
  }
  return out;
}

Position argmax_position(const Tensor& a, std::size_t channel) {
  const std::size_t h = a.shape()[1], w = a.shape()[2];
  Position best;
  double value = a.at(channel, 0, 0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (a.at(channel, i, j) > value) {
        value = a.at(channel, i, j);
        best = Position{i, j};
      }
    }
  }
  return best;
}

namespace {

Position unit_position(const FeatureTarget& t, const Tensor& a, std::optional<Position> position) {
  if (position) return *position;
  if (t.position) return *t.position;
  return argmax_position(a, t.channel);
}

}  // namespace

double objective_value(const FeatureTarget& t, const Tensor& a, std::optional<Position> position) {
  const std::size_t channels = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  switch (t.kind) {
    case ObjectiveKind::sum_abs_map: {
      double f = 0;
      for (std::size_t i = 0; i < h * w; ++i) f += std::abs(a[t.channel * h * w + i]);
      return f;
    }
    case ObjectiveKind::spatial_unit: {
      const Position p = unit_position(t, a, position);
      return a.at(t.channel, p.h, p.w);
    }
    case ObjectiveKind::direction: {
      double f = 0;
      for (std::size_t i = 0; i < h * w; ++i) {
        double proj = 0;
        for (std::size_t c = 0; c < channels; ++c) proj += t.direction[c] * a[c * h * w + i];
        f += std::abs(proj);
      }
      return f;
    }
  }
  return 0;
}

Tensor objective_seed(const FeatureTarget& t, const Tensor& a, std::optional<Position> position) {
  const std::size_t channels = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  Tensor seed(a.shape(), 0.0);
  switch (t.kind) {
    case ObjectiveKind::sum_abs_map:
      for (std::size_t i = 0; i < h * w; ++i) seed[t.channel * h * w + i] = sign(a[t.channel * h * w + i]);
      break;
    case ObjectiveKind::spatial_unit: {
      const Position p = unit_position(t, a, position);
      seed.at(t.channel, p.h, p.w) = 1.0;
      break;
    }
    case ObjectiveKind::direction:
      for (std::size_t i = 0; i < h * w; ++i) {
        double proj = 0;
        for (std::size_t c = 0; c < channels; ++c) proj += t.direction[c] * a[c * h * w + i];
        const double s = sign(proj);
        for (std::size_t c = 0; c < channels; ++c) seed[c * h * w + i] = s * t.direction[c];
      }
      break;
  }
  return seed;
}

std::vector<std::optional<Position>> resolve_positions(const ModelGraph& model, const FeatureTarget& t,
                                                       std::span<const Tensor> images) {
  validate_target(model, t);
  std::vector<std::optional<Position>> out(images.size());
  if (t.kind != ObjectiveKind::spatial_unit) return out;
  if (!t.at_max) {
    for (auto& p : out) p = t.position;
    return out;
  }
  const std::size_t layer = model.layer_index(t.layer);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i] = argmax_position(evaluate_layer(model, images[i], layer), t.channel);
  }
  return out;
}

}  // namespace circuits
