#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "circuits/tensor.hpp"

namespace circuits {

enum class DatasetKind { two_category_shapes, blobs, arcs_vs_corners };
const char* to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& name);

struct SyntheticDatasetSpec {
  DatasetKind kind = DatasetKind::two_category_shapes;
  std::size_t image_size = 16;
  std::size_t samples_per_class = 100;
  std::uint64_t seed = 0;
  double noise = 0.05;      // std of additive Gaussian pixel noise
  double texture = 0.5;     // amplitude of a random grating behind the shapes
};

/// Labelled single-channel images. Samples alternate between classes, so
/// any prefix of even length is balanced.
struct Dataset {
  SyntheticDatasetSpec spec;
  std::vector<std::string> class_names;
  std::vector<Tensor> images;  // each 1 x H x W
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return images.size(); }
  /// Images whose label equals `label`, in dataset order.
  std::vector<Tensor> class_images(std::size_t label) const;
  Tensor batch() const { return Tensor::stack(images); }
};

/// two_category_shapes: rings vs. plus-shaped crosses with jittered center,
/// size and stroke. blobs: a Gaussian spot in the left vs. right half.
/// arcs_vs_corners: quarter arcs vs. tangent corners at random rotation.
Dataset generate_dataset(const SyntheticDatasetSpec& spec);

/// Archive layout: "CFDATA01", u64 LE header length, JSON header, then
/// float64 LE pixels for every image and u32 LE labels.
std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(const std::string& bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Images from a dataset archive, or from every *.cfdata archive in a
/// directory (name order). Throws IoError when nothing can be read.
std::vector<Tensor> load_images(const std::filesystem::path& path);

}  // namespace circuits
