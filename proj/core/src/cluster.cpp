#include "circuits/cluster.hpp"

#include <algorithm>
#include <numeric>

#include "circuits/error.hpp"
#include "circuits/evaluate.hpp"

namespace circuits {

namespace {

Tensor crop(const Tensor& image, const Rect& r) {
  const std::size_t c = image.shape()[0];
  Tensor out(Shape{c, static_cast<std::size_t>(r.height), static_cast<std::size_t>(r.width)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < r.height; ++i) {
      for (std::int64_t j = 0; j < r.width; ++j) {
        out.at(ch, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
            image.at(ch, static_cast<std::size_t>(r.top + i), static_cast<std::size_t>(r.left + j));
      }
    }
  }
  return out;
}

}  // namespace

ActivationHarvest harvest_top_activations(const ModelGraph& model, const std::string& layer, std::size_t channel,
                                          std::span<const Tensor> dataset, std::size_t n) {
  const std::size_t index = model.layer_index(layer);
  validate_target(model, FeatureTarget::sum_abs(layer, channel));
  if (n == 0) throw ValidationError("harvest size must be positive");
  if (n > dataset.size()) {
    throw ValidationError("cannot harvest " + std::to_string(n) + " activations from " +
                          std::to_string(dataset.size()) + " images");
  }
  std::vector<HarvestRecord> all;
  all.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor a = evaluate_layer(model, dataset[i], index);
    const Position p = argmax_position(a, channel);
    HarvestRecord r;
    r.image = i;
    r.position = p;
    r.value = a.at(channel, p.h, p.w);
    all.push_back(std::move(r));
  }
  std::stable_sort(all.begin(), all.end(), [](const HarvestRecord& a, const HarvestRecord& b) { return a.value > b.value; });
  all.resize(n);
  ActivationHarvest h;
  h.layer = layer;
  h.channel = channel;
  h.low_signal = true;
  for (auto& r : all) {
    r.rect = receptive_rect(model, index, r.position);
    r.patch = crop(dataset[r.image], r.rect);
    if (r.value != 0.0) h.low_signal = false;
  }
  h.records = std::move(all);
  return h;
}

Position central_position(const ModelGraph& model, std::size_t layer) {
  const Shape& s = model.output_shape(layer);
  if (s.rank() != 3) throw GraphError("layer '" + model.layer(layer).name + "' has no spatial map");
  return Position{s[1] / 2, s[2] / 2};
}

Tensor population_vectors(const ModelGraph& model, const ActivationHarvest& harvest) {
  if (harvest.records.empty()) throw ValidationError("population vectors need a non-empty harvest");
  const std::size_t layer = model.layer_index(harvest.layer);
  const Position center = central_position(model, layer);
  const Rect central = receptive_rect_unclamped(model, layer, center);
  const Shape& in = model.input_shape();
  const auto height = static_cast<std::int64_t>(in[1]);
  const auto width = static_cast<std::int64_t>(in[2]);
  const std::size_t channels = model.output_shape(layer)[0];

  Tensor out(Shape{harvest.records.size(), channels});
  for (std::size_t i = 0; i < harvest.records.size(); ++i) {
    const HarvestRecord& r = harvest.records[i];
    const Rect source = receptive_rect_unclamped(model, layer, r.position);
    const std::int64_t top = central.top + (r.rect.top - source.top);
    const std::int64_t left = central.left + (r.rect.left - source.left);
    Tensor canvas(in, 0.0);
    for (std::size_t c = 0; c < in[0]; ++c) {
      for (std::int64_t y = 0; y < r.rect.height; ++y) {
        for (std::int64_t x = 0; x < r.rect.width; ++x) {
          const std::int64_t cy = top + y, cx = left + x;
          if (cy < 0 || cx < 0 || cy >= height || cx >= width) continue;
          canvas.at(c, static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)) =
              r.patch.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        }
      }
    }
    const Tensor a = evaluate_layer(model, canvas, layer);
    for (std::size_t c = 0; c < channels; ++c) out.at(i, c) = a.at(c, center.h, center.w);
  }
  return out;
}

PolysemanticScan find_polysemantic_candidates(const ModelGraph& model, const std::string& layer,
                                              std::span<const Tensor> dataset, std::size_t n,
                                              std::size_t min_cluster_size) {
  const std::size_t index = model.layer_index(layer);
  const Shape& s = model.output_shape(index);
  if (s.rank() != 3) throw GraphError("layer '" + layer + "' has no channel maps");
  PolysemanticScan scan;
  scan.layer = layer;
  for (std::size_t c = 0; c < s[0]; ++c) {
    ChannelClusters cc;
    cc.channel = c;
    const ActivationHarvest h = harvest_top_activations(model, layer, c, dataset, n);
    cc.low_signal = h.low_signal;
    if (h.low_signal) {
      cc.clusters.labels.assign(h.records.size(), -1);
      cc.clusters.min_cluster_size = min_cluster_size;
    } else {
      cc.clusters = hdbscan(population_vectors(model, h), min_cluster_size);
      for (double v : cc.clusters.stabilities) cc.combined_stability += v;
    }
    scan.channels.push_back(std::move(cc));
  }
  for (const auto& cc : scan.channels) {
    if (!cc.low_signal && cc.clusters.cluster_count >= 2) scan.candidates.push_back(cc.channel);
  }
  std::stable_sort(scan.candidates.begin(), scan.candidates.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = scan.channels[a];
    const auto& y = scan.channels[b];
    if (x.clusters.cluster_count != y.clusters.cluster_count) return x.clusters.cluster_count > y.clusters.cluster_count;
    return x.combined_stability > y.combined_stability;
  });
  return scan;
}

}  // namespace circuits
