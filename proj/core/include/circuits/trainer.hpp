#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuits/dataset.hpp"
#include "circuits/model.hpp"

namespace circuits {

struct RegularizerConfig {
  double lambda1 = 0.002;
  double lambda2 = 0.6;
};

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.7;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Floor applied to sqrt arguments when differentiating the group term.
inline constexpr double kSqrtGuard = 1e-12;
/// A kernel survives while its mean absolute weight exceeds this.
inline constexpr double kSurvivalThreshold = 1e-3;

/// Sum over input channels of the squared sum over output channels of
/// sqrt(sum |w|) across each kernel. `weights` is C_out x C_in x K_h x K_w.
double reg_group_l12(const Tensor& weights);
double reg_l1(const Tensor& weights);
/// Subgradients (zero where |w| is not differentiable).
Tensor reg_group_l12_gradient(const Tensor& weights);
Tensor reg_l1_gradient(const Tensor& weights);

struct LossResult {
  double loss = 0;
  double cross_entropy = 0;  // mean over the batch
  double reg_group = 0;      // sum over conv layers, unscaled
  double reg_l1 = 0;         // sum over conv layers, unscaled
  std::size_t correct = 0;
  std::vector<LayerParams> gradients;  // per layer; empty for parameter-free layers
};

/// Mean softmax cross-entropy of the final layer's logits plus
/// lambda2 * lambda1 * sum R_group + (1 - lambda2) * lambda1 * sum R_1 over
/// conv layers, with gradients for every parameter.
LossResult total_loss(const ModelGraph& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                      const RegularizerConfig& reg);

struct LayerSurvival {
  std::string layer;
  std::size_t kernels = 0;
  std::size_t surviving = 0;
  double fraction = 0;
};
std::vector<LayerSurvival> kernel_survival(const ModelGraph& model, double threshold = kSurvivalThreshold);
/// Conv kernels with mean |w| below `threshold`.
std::size_t count_small_kernels(const ModelGraph& model, double threshold = kSurvivalThreshold);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double cross_entropy = 0;
  double accuracy = 0;
  std::vector<LayerSurvival> survival;
};

struct TrainHistory {
  TrainConfig train;
  RegularizerConfig reg;
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  ModelGraph model;
  TrainHistory history;
};

/// Minibatch SGD with momentum (v <- mu v + g; w <- w - lr v), shuffled
/// each epoch from the seed. Parameters are rounded to float32 after every
/// step. Throws DivergenceError on a non-finite loss.
TrainResult train(ModelGraph model, const Dataset& data, const TrainConfig& cfg, const RegularizerConfig& reg);

/// Fraction of images whose argmax logit equals the label.
double accuracy(const ModelGraph& model, const Dataset& data);

/// Four convs with ReLUs, the second and fourth downsampling by stride 2,
/// then a linear head.
std::vector<LayerSpec> toy_classifier(std::size_t image_size, std::size_t classes = 2,
                                      std::vector<std::size_t> widths = {8, 12, 12, 12});

/// Digest of a train configuration, stored in model metadata.
std::string train_config_digest(const TrainConfig& cfg, const RegularizerConfig& reg, const SyntheticDatasetSpec& data);

void to_json(nlohmann::json& j, const TrainHistory& h);

}  // namespace circuits
