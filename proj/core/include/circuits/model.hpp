#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuits/ops.hpp"
#include "circuits/tensor.hpp"

namespace circuits {

enum class LayerKind { input, conv, relu, maxpool, avgpool, flatten, linear, add };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Declarative description of one layer.
///
/// `kernel_h`/`kernel_w`, `stride` and `padding` apply to conv and pooling
/// layers (pooling windows are square: kernel_h == kernel_w). `channels`
/// is the output channel count of a conv or the channel count of the input
/// layer; `units` is the width of a linear layer.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<std::string> inputs;
  std::size_t channels = 0;
  std::size_t height = 0;  // input layer only
  std::size_t width = 0;   // input layer only
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t units = 0;

  static LayerSpec input(std::string name, std::size_t channels, std::size_t height, std::size_t width);
  static LayerSpec conv(std::string name, std::string from, std::size_t out_channels, std::size_t kernel,
                        std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec relu(std::string name, std::string from);
  static LayerSpec maxpool(std::string name, std::string from, std::size_t kernel = 2, std::size_t stride = 2,
                           std::size_t padding = 0);
  static LayerSpec avgpool(std::string name, std::string from, std::size_t kernel = 2, std::size_t stride = 2,
                           std::size_t padding = 0);
  static LayerSpec flatten(std::string name, std::string from);
  static LayerSpec linear(std::string name, std::string from, std::size_t units);
  static LayerSpec add(std::string name, std::string a, std::string b);

  bool operator==(const LayerSpec&) const = default;
};

void to_json(nlohmann::json& j, const LayerSpec& spec);
void from_json(const nlohmann::json& j, LayerSpec& spec);

/// Weights and biases of a conv (C_out x C_in x K_h x K_w) or linear
/// (units x features) layer. Empty for parameter-free layers.
struct LayerParams {
  Tensor weights;
  std::vector<double> bias;
};

struct ModelMetadata {
  std::uint64_t seed = 0;
  std::string train_config_digest;
  nlohmann::json extra = nlohmann::json::object();
};

/// Identifies one K_h x K_w kernel of a conv layer.
struct KernelId {
  std::string layer;
  std::size_t out = 0;
  std::size_t in = 0;

  bool operator==(const KernelId&) const = default;
};

/// Layer DAG in topological order with per-layer parameters.
///
/// Every conv kernel has a flat structural index: conv layers in
/// topological order, then out-channel, then in-channel. That index is the
/// canonical kernel identity used by masks, saliency maps and tie-breaking.
class ModelGraph {
 public:
  ModelGraph() = default;

  /// Validates the declared layers, sorts them topologically (ties keep
  /// declaration order), infers shapes and allocates zeroed parameters.
  /// Throws GraphError on structural problems and ShapeError on
  /// inconsistent extents.
  static ModelGraph build(std::vector<LayerSpec> layers, ModelMetadata metadata = {});

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const LayerSpec& layer(std::size_t index) const { return layers_.at(index); }
  std::size_t layer_index(const std::string& name) const;
  bool has_layer(const std::string& name) const;
  /// Producers of layer `index`, as layer indices.
  const std::vector<std::size_t>& layer_inputs(std::size_t index) const { return input_indices_.at(index); }
  std::vector<std::size_t> consumers(std::size_t index) const;
  std::vector<std::size_t> output_layers() const;

  std::size_t input_layer() const noexcept { return 0; }
  const Shape& input_shape() const { return shapes_.at(0); }
  const Shape& output_shape(std::size_t index) const { return shapes_.at(index); }

  LayerParams& params(std::size_t index) { return params_.at(index); }
  const LayerParams& params(std::size_t index) const { return params_.at(index); }

  std::vector<std::size_t> conv_layers() const;
  std::size_t kernel_count() const noexcept { return kernel_total_; }
  /// First flat kernel index of conv layer `index`.
  std::size_t kernel_offset(std::size_t index) const { return kernel_offsets_.at(index); }
  std::size_t kernel_index(std::size_t layer, std::size_t out, std::size_t in) const;
  std::size_t kernel_index(const KernelId& id) const;
  KernelId kernel_id(std::size_t flat) const;
  /// Layer index, out-channel and in-channel of a flat kernel index.
  struct KernelLocation {
    std::size_t layer;
    std::size_t out;
    std::size_t in;
  };
  KernelLocation locate_kernel(std::size_t flat) const;

  const ModelMetadata& metadata() const noexcept { return metadata_; }
  ModelMetadata& metadata() noexcept { return metadata_; }

  /// He-normal weights, zero biases, all rounded to float32.
  void initialize(std::uint64_t seed);
  /// Rounds every parameter to the nearest float32 value.
  void round_parameters_to_float32();

  /// SHA-256 over the serialized model (hex).
  std::string digest() const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::vector<std::size_t>> input_indices_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams> params_;
  std::vector<std::size_t> kernel_offsets_;
  std::vector<std::size_t> kernel_layers_;  // conv layer indices in order
  std::size_t kernel_total_ = 0;
  ModelMetadata metadata_;
};

ConvGeometry conv_geometry(const LayerSpec& spec);
PoolGeometry pool_geometry(const LayerSpec& spec);

}  // namespace circuits
