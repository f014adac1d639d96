#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuits/circuit.hpp"
#include "circuits/model.hpp"
#include "circuits/saliency.hpp"
#include "circuits/target.hpp"

namespace circuits {

/// |Pearson r| of two equally long vectors (length >= 2); 0 when either
/// has zero variance.
double pearson_abs(std::span<const double> original, std::span<const double> circuit);

/// mean |o - c| / |mean o|. Throws ValidationError on empty or unequal
/// inputs and on a zero mean.
double delta_f_norm(std::span<const double> original, std::span<const double> circuit);

/// Parses "HI:LO:logN", "HI:LO:linN" or a comma-separated list into a
/// strictly decreasing sparsity list in (0, 1].
std::vector<double> parse_sparsity_list(const std::string& text);
std::vector<double> log_spaced(double hi, double lo, std::size_t n);
std::vector<double> lin_spaced(double hi, double lo, std::size_t n);

enum class MetricKind { pearson_abs, delta_f_norm };
const char* to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& name);
/// Pearson for whole-feature objectives, delta_f_norm for spatial units.
MetricKind default_metric(const FeatureTarget& target);

struct SweepOptions {
  Criterion criterion = Criterion::actgrad;
  BiasMode bias_mode = BiasMode::masked;
  std::uint64_t seed = 0;  // random criterion only
  std::size_t force_iterations = 10;
  bool normalize = false;
  std::optional<MetricKind> metric;
};

struct SweepEntry {
  double sparsity = 0;
  std::size_t kept = 0;
  double effective_sparsity = 0;
  double metric = 0;
  bool connected = true;
  std::vector<double> circuit_values;
};

struct PreservationReport {
  FeatureTarget target;
  Criterion criterion = Criterion::actgrad;
  MetricKind metric = MetricKind::pearson_abs;
  BiasMode bias_mode = BiasMode::masked;
  std::string model_digest;
  std::string image_digest;  // images the circuits were evaluated on
  std::string score_digest;  // images the circuits were scored on
  std::size_t relevant_count = 0;
  std::vector<double> original_values;
  std::vector<SweepEntry> entries;
};

/// Per-image scalar feature value: sum |A_c|, the unit activation at the
/// given position, or sum |dir . A|. With `mask` the circuit is evaluated.
std::vector<double> feature_values(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                                   const CircuitMask* mask = nullptr,
                                   const std::vector<std::optional<Position>>* positions = nullptr);

/// One mask per sparsity. Scores are computed once and reused, except for
/// FORCE which reruns per kept count. Throws ValidationError unless the
/// list is strictly decreasing in (0, 1].
std::vector<CircuitMask> sweep_masks(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& options,
                                     std::span<const double> sparsities, std::span<const Tensor> images);

/// Evaluates ready-made masks on `images`. Disconnected circuits get
/// |R| = 0 under the Pearson metric.
PreservationReport evaluate_sweep(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& options,
                                  std::span<const double> sparsities, std::span<const CircuitMask> masks,
                                  std::span<const Tensor> images);

PreservationReport sparsity_sweep(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& options,
                                  std::span<const double> sparsities, std::span<const Tensor> images);

struct SubcircuitReport {
  FeatureTarget target;
  double threshold = 0.15;
  PreservationReport a_on_a;
  PreservationReport a_on_b;
  PreservationReport b_on_b;
  PreservationReport b_on_a;
  std::optional<double> iou_sparsity_a;
  std::optional<double> iou_sparsity_b;
  std::vector<LayerIou> iou;
};

/// Sparsity of the last entry in the leading run whose metric stays below
/// `threshold`, if any.
std::optional<std::size_t> last_entry_below(const PreservationReport& report, double threshold);

/// Prunes one subcircuit per image set for the target's top activation in
/// each image (an `@max` unit target) and evaluates both on both sets.
/// The IoU compares each circuit at its own last sub-threshold sparsity.
SubcircuitReport subcircuit_separation(const ModelGraph& model, const FeatureTarget& target,
                                       std::span<const Tensor> images_a, std::span<const Tensor> images_b,
                                       std::span<const double> sparsities, const SweepOptions& options = {},
                                       double threshold = 0.15);

}  // namespace circuits
