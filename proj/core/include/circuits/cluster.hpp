#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "circuits/hdbscan.hpp"
#include "circuits/model.hpp"
#include "circuits/receptive_field.hpp"
#include "circuits/target.hpp"

namespace circuits {

struct HarvestRecord {
  std::size_t image = 0;
  Position position;
  double value = 0;
  Rect rect;     // clamped receptive field in the source image
  Tensor patch;  // C x rect.height x rect.width crop of the source image
};

/// Top activations of one channel, at most one per image, strongest first
/// (ties to the lower image index). `low_signal` marks a channel whose
/// harvested activations are all zero.
struct ActivationHarvest {
  std::string layer;
  std::size_t channel = 0;
  std::vector<HarvestRecord> records;
  bool low_signal = false;
};

/// Throws ValidationError when n exceeds the dataset or is zero.
ActivationHarvest harvest_top_activations(const ModelGraph& model, const std::string& layer, std::size_t channel,
                                          std::span<const Tensor> dataset, std::size_t n = 300);

/// Central position of a layer's map: (H / 2, W / 2).
Position central_position(const ModelGraph& model, std::size_t layer);

/// Row i holds every channel of the harvest layer at its central position
/// when patch i is pasted into an all-zero canvas at the same offset
/// within the central receptive field as it had in its source image.
/// Throws ValidationError on an empty harvest.
Tensor population_vectors(const ModelGraph& model, const ActivationHarvest& harvest);

struct ChannelClusters {
  std::size_t channel = 0;
  bool low_signal = false;
  ClusterResult clusters;
  double combined_stability = 0;
};

struct PolysemanticScan {
  std::string layer;
  std::vector<ChannelClusters> channels;  // every channel, in channel order
  std::vector<std::size_t> candidates;    // channels with >= 2 clusters, ranked
};

/// harvest -> population vectors -> hdbscan for every channel of `layer`.
/// Candidates rank by cluster count, then combined stability, then channel.
PolysemanticScan find_polysemantic_candidates(const ModelGraph& model, const std::string& layer,
                                              std::span<const Tensor> dataset, std::size_t n = 300,
                                              std::size_t min_cluster_size = 10);

}  // namespace circuits
