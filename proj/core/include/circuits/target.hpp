#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuits/model.hpp"
#include "circuits/tensor.hpp"

namespace circuits {

enum class ObjectiveKind { sum_abs_map, spatial_unit, direction };

const char* to_string(ObjectiveKind kind);

struct Position {
  std::size_t h = 0;
  std::size_t w = 0;
  bool operator==(const Position&) const = default;
};

/// The feature a circuit must preserve, read off one conv-like layer output.
///
///   sum_abs_map   f = sum |A[c]|
///   spatial_unit  f = A[c, h, w]; with `at_max` the position is the argmax
///                 of A[c] on the full model, chosen per image
///   direction     f = sum_{h,w} |dir . A[:, h, w]|, dir of unit L2 norm
///
/// Text form: "conv3:5", "conv3:5@3,4", "conv3:5@max", "conv3:dir=0.6,0.8".
struct FeatureTarget {
  std::string layer;
  ObjectiveKind kind = ObjectiveKind::sum_abs_map;
  std::size_t channel = 0;
  std::optional<Position> position;
  bool at_max = false;
  std::vector<double> direction;

  static FeatureTarget sum_abs(std::string layer, std::size_t channel);
  static FeatureTarget unit(std::string layer, std::size_t channel, Position position);
  static FeatureTarget unit_at_max(std::string layer, std::size_t channel);
  static FeatureTarget along(std::string layer, std::vector<double> direction);

  bool operator==(const FeatureTarget&) const = default;
};

std::string to_string(const FeatureTarget& target);
/// Throws ValidationError on malformed text.
FeatureTarget parse_target(const std::string& text);

void to_json(nlohmann::json& j, const FeatureTarget& target);
void from_json(const nlohmann::json& j, FeatureTarget& target);

/// Throws GraphError if the layer is missing or not C x H x W, the channel
/// or position is out of range, or the direction is not unit-norm.
void validate_target(const ModelGraph& model, const FeatureTarget& target);

/// Channels of the target layer that the objective reads.
std::vector<std::size_t> target_channels(const ModelGraph& model, const FeatureTarget& target);

/// First position of the maximum of channel `channel` in scan order.
Position argmax_position(const Tensor& layer_output, std::size_t channel);

/// Objective value and its gradient with respect to the layer output.
/// `position` overrides the target's own position (used to pin at_max
/// targets to the positions found on the full model).
double objective_value(const FeatureTarget& target, const Tensor& layer_output,
                       std::optional<Position> position = std::nullopt);
Tensor objective_seed(const FeatureTarget& target, const Tensor& layer_output,
                      std::optional<Position> position = std::nullopt);

/// Fixed evaluation positions for each image: the target's own position,
/// the full-model argmax for at_max targets, nullopt for map objectives.
std::vector<std::optional<Position>> resolve_positions(const ModelGraph& model, const FeatureTarget& target,
                                                       std::span<const Tensor> images);

}  // namespace circuits
