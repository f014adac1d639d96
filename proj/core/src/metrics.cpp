#include "circuits/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "circuits/connectivity.hpp"
#include "circuits/digest.hpp"
#include "circuits/error.hpp"
#include "circuits/evaluate.hpp"

namespace circuits {

double pearson_abs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("pearson_abs needs equally long vectors");
  if (a.size() < 2) throw ValidationError("pearson_abs needs at least two values");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  const double r = cov / std::sqrt(va * vb);
  return std::min(1.0, std::abs(r));
}

double delta_f_norm(std::span<const double> o, std::span<const double> c) {
  if (o.empty() || o.size() != c.size()) throw ValidationError("delta_f_norm needs equally long non-empty vectors");
  double mean = 0, diff = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    mean += o[i];
    diff += std::abs(o[i] - c[i]);
  }
  if (mean == 0.0) throw ValidationError("delta_f_norm is undefined for a zero mean original activation");
  return diff / std::abs(mean);
}

std::vector<double> log_spaced(double hi, double lo, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {hi};
  std::vector<double> out(n);
  const double lh = std::log(hi), ll = std::log(lo);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(lh + (ll - lh) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  out.front() = hi;
  out.back() = lo;
  return out;
}

std::vector<double> lin_spaced(double hi, double lo, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {hi};
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = hi + (lo - hi) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  out.back() = lo;
  return out;
}

namespace {

void check_sparsities(std::span<const double> s) {
  if (s.empty()) throw ValidationError("sparsity list is empty");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0 && s[i] <= 1.0)) {
      throw ValidationError("sparsity " + std::to_string(s[i]) + " outside (0, 1]");
    }
    if (i > 0 && !(s[i] < s[i - 1])) throw ValidationError("sparsities must be strictly decreasing");
  }
}

double parse_number(const std::string& text, const std::string& whole) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw ValidationError("malformed sparsity list '" + whole + "': '" + text + "' is not a number");
  }
}

}  // namespace

std::vector<double> parse_sparsity_list(const std::string& text) {
  std::vector<double> out;
  const auto first = text.find(':');
  if (first != std::string::npos) {
    const auto second = text.find(':', first + 1);
    if (second == std::string::npos) {
      throw ValidationError("malformed sparsity range '" + text + "': expected HI:LO:logN or HI:LO:linN");
    }
    const double hi = parse_number(text.substr(0, first), text);
    const double lo = parse_number(text.substr(first + 1, second - first - 1), text);
    const std::string spec = text.substr(second + 1);
    const bool log = spec.rfind("log", 0) == 0;
    const bool lin = spec.rfind("lin", 0) == 0;
    if (!log && !lin) throw ValidationError("sparsity range '" + text + "' must end in logN or linN");
    const double count = parse_number(spec.substr(3), text);
    if (count < 1 || count != std::floor(count)) throw ValidationError("sparsity count must be a positive integer");
    if (!(hi > lo) && count > 1) throw ValidationError("sparsity range must run from high to low");
    if (log && !(lo > 0)) throw ValidationError("log-spaced sparsities need a positive lower end");
    out = log ? log_spaced(hi, lo, static_cast<std::size_t>(count)) : lin_spaced(hi, lo, static_cast<std::size_t>(count));
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number(item, text));
  }
  check_sparsities(out);
  return out;
}

const char* to_string(MetricKind kind) { return kind == MetricKind::pearson_abs ? "pearson_abs" : "delta_f_norm"; }

MetricKind metric_kind_from_string(const std::string& name) {
  if (name == "pearson_abs") return MetricKind::pearson_abs;
  if (name == "delta_f_norm") return MetricKind::delta_f_norm;
  throw ValidationError("unknown metric '" + name + "'");
}

MetricKind default_metric(const FeatureTarget& target) {
  return target.kind == ObjectiveKind::spatial_unit ? MetricKind::delta_f_norm : MetricKind::pearson_abs;
}

std::vector<double> feature_values(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                                   const CircuitMask* mask, const std::vector<std::optional<Position>>* positions) {
  validate_target(model, target);
  std::vector<std::optional<Position>> resolved;
  if (!positions) {
    resolved = resolve_positions(model, target, images);
    positions = &resolved;
  }
  const std::size_t layer = model.layer_index(target.layer);
  GateSet gates;
  if (mask) gates = make_gates(model, *mask);
  std::vector<double> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor a = evaluate_layer(model, images[i], layer, mask ? &gates : nullptr);
    out[i] = objective_value(target, a, (*positions)[i]);
  }
  return out;
}

std::vector<CircuitMask> sweep_masks(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& options,
                                     std::span<const double> sparsities, std::span<const Tensor> images) {
  check_sparsities(sparsities);
  const std::size_t m = relevant_kernel_indices(model, target).size();
  if (m == 0) throw ValidationError("target " + to_string(target) + " has no relevant kernels");
  std::vector<CircuitMask> masks;
  if (options.criterion == Criterion::force) {
    for (double s : sparsities) {
      const std::size_t kappa = kappa_for(s, m);
      CircuitMask mask = kappa == m ? keep_all(model, target)
                                    : score_force(model, target, images, kappa, options.force_iterations).mask;
      mask.provenance = MaskProvenance{"force", image_set_digest(images)};
      mask.sparsity = s;
      masks.push_back(std::move(mask));
    }
  } else {
    SaliencyMap scores;
    switch (options.criterion) {
      case Criterion::actgrad:
        scores = score_actgrad(model, target, images);
        break;
      case Criterion::snip:
        scores = score_snip(model, target, images);
        break;
      case Criterion::magnitude:
        scores = score_magnitude(model, target);
        break;
      case Criterion::random:
        scores = score_random(model, target, options.seed);
        break;
      case Criterion::force:
        break;
    }
    if (options.normalize) scores = minmax_normalize(model, scores);
    for (double s : sparsities) masks.push_back(select_topk(model, scores, s));
  }
  for (auto& mask : masks) {
    mask.bias_mode = options.bias_mode;
  }
  return masks;
}

PreservationReport evaluate_sweep(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& options,
                                  std::span<const double> sparsities, std::span<const CircuitMask> masks,
                                  std::span<const Tensor> images) {
  if (masks.size() != sparsities.size()) throw ValidationError("one mask per sparsity is required");
  if (images.empty()) throw ValidationError("sweeps need at least one image");
  PreservationReport r;
  r.target = target;
  r.criterion = options.criterion;
  r.metric = options.metric.value_or(default_metric(target));
  r.bias_mode = options.bias_mode;
  r.model_digest = model.digest();
  r.image_digest = image_set_digest(images);
  r.relevant_count = relevant_kernel_indices(model, target).size();
  const auto positions = resolve_positions(model, target, images);
  r.original_values = feature_values(model, target, images, nullptr, &positions);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const CircuitMask& mask = masks[i];
    SweepEntry e;
    e.sparsity = sparsities[i];
    e.kept = mask.kept.size();
    e.effective_sparsity = effective_sparsity(model, mask);
    e.connected = check_connected(model, mask);
    e.circuit_values = feature_values(model, target, images, &mask, &positions);
    if (r.metric == MetricKind::pearson_abs) {
      e.metric = e.connected ? pearson_abs(r.original_values, e.circuit_values) : 0.0;
    } else {
      e.metric = delta_f_norm(r.original_values, e.circuit_values);
    }
    r.entries.push_back(std::move(e));
  }
  if (!masks.empty()) r.score_digest = masks.front().provenance.image_digest;
  return r;
}

PreservationReport sparsity_sweep(const ModelGraph& model, const FeatureTarget& target, const SweepOptions& options,
                                  std::span<const double> sparsities, std::span<const Tensor> images) {
  const auto masks = sweep_masks(model, target, options, sparsities, images);
  return evaluate_sweep(model, target, options, sparsities, masks, images);
}

std::optional<std::size_t> last_entry_below(const PreservationReport& report, double threshold) {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    if (!(report.entries[i].metric < threshold)) break;
    last = i;
  }
  return last;
}

SubcircuitReport subcircuit_separation(const ModelGraph& model, const FeatureTarget& target,
                                       std::span<const Tensor> images_a, std::span<const Tensor> images_b,
                                       std::span<const double> sparsities, const SweepOptions& options,
                                       double threshold) {
  if (images_a.empty() || images_b.empty()) throw ValidationError("subcircuit separation needs two non-empty image sets");
  FeatureTarget unit = target;
  if (unit.kind == ObjectiveKind::sum_abs_map) {
    unit = FeatureTarget::unit_at_max(target.layer, target.channel);
  } else if (unit.kind == ObjectiveKind::direction) {
    throw ValidationError("subcircuit pruning needs a single-channel target");
  }
  SweepOptions opts = options;
  opts.metric = MetricKind::delta_f_norm;

  SubcircuitReport r;
  r.target = unit;
  r.threshold = threshold;
  const auto masks_a = sweep_masks(model, unit, opts, sparsities, images_a);
  const auto masks_b = sweep_masks(model, unit, opts, sparsities, images_b);
  r.a_on_a = evaluate_sweep(model, unit, opts, sparsities, masks_a, images_a);
  r.a_on_b = evaluate_sweep(model, unit, opts, sparsities, masks_a, images_b);
  r.b_on_b = evaluate_sweep(model, unit, opts, sparsities, masks_b, images_b);
  r.b_on_a = evaluate_sweep(model, unit, opts, sparsities, masks_b, images_a);
  const auto ia = last_entry_below(r.a_on_a, threshold);
  const auto ib = last_entry_below(r.b_on_b, threshold);
  if (ia) r.iou_sparsity_a = sparsities[*ia];
  if (ib) r.iou_sparsity_b = sparsities[*ib];
  if (ia && ib) r.iou = iou_per_layer(model, masks_a[*ia], masks_b[*ib]);
  return r;
}

}  // namespace circuits
