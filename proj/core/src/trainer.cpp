#include "circuits/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "circuits/digest.hpp"
#include "circuits/error.hpp"
#include "circuits/evaluate.hpp"

namespace circuits {

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

struct KernelView {
  std::size_t out, in, area;
};

KernelView view(const Tensor& w) {
  if (w.shape().rank() != 4) throw ShapeError("weights", "expected C_out x C_in x K_h x K_w, got " + w.shape().to_string());
  return {w.shape()[0], w.shape()[1], w.shape()[2] * w.shape()[3]};
}

double kernel_abs_sum(const Tensor& w, const KernelView& v, std::size_t co, std::size_t ci) {
  const std::size_t base = (co * v.in + ci) * v.area;
  double s = 0;
  for (std::size_t p = 0; p < v.area; ++p) s += std::abs(w[base + p]);
  return s;
}

// Softmax cross-entropy of one logit vector; writes dL/dlogits.
double cross_entropy(const Tensor& logits, std::size_t label, Tensor& grad) {
  const auto& z = logits.values();
  const double m = *std::max_element(z.begin(), z.end());
  double denom = 0;
  for (double v : z) denom += std::exp(v - m);
  const double log_denom = std::log(denom) + m;
  grad = Tensor(logits.shape());
  for (std::size_t k = 0; k < z.size(); ++k) grad[k] = std::exp(z[k] - log_denom);
  grad[label] -= 1.0;
  return log_denom - z[label];
}

std::size_t argmax(const Tensor& t) {
  const auto& v = t.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t output_layer(const ModelGraph& model) {
  const auto outs = model.output_layers();
  if (outs.size() != 1 || model.output_shape(outs[0]).rank() != 1) {
    throw ValidationError("training needs a single classification head producing a logit vector");
  }
  return outs[0];
}

}  // namespace

double reg_group_l12(const Tensor& weights) {
  const KernelView v = view(weights);
  double total = 0;
  for (std::size_t ci = 0; ci < v.in; ++ci) {
    double group = 0;
    for (std::size_t co = 0; co < v.out; ++co) group += std::sqrt(kernel_abs_sum(weights, v, co, ci));
    total += group * group;
  }
  return total;
}

double reg_l1(const Tensor& weights) {
  double s = 0;
  for (double w : weights.values()) s += std::abs(w);
  return s;
}

Tensor reg_group_l12_gradient(const Tensor& weights) {
  const KernelView v = view(weights);
  Tensor g(weights.shape());
  for (std::size_t ci = 0; ci < v.in; ++ci) {
    double group = 0;
    for (std::size_t co = 0; co < v.out; ++co) group += std::sqrt(kernel_abs_sum(weights, v, co, ci));
    for (std::size_t co = 0; co < v.out; ++co) {
      const double u = kernel_abs_sum(weights, v, co, ci);
      const double coeff = group / std::sqrt(std::max(u, kSqrtGuard));
      const std::size_t base = (co * v.in + ci) * v.area;
      for (std::size_t p = 0; p < v.area; ++p) g[base + p] = coeff * sign(weights[base + p]);
    }
  }
  return g;
}

Tensor reg_l1_gradient(const Tensor& weights) {
  Tensor g(weights.shape());
  for (std::size_t i = 0; i < weights.size(); ++i) g[i] = sign(weights[i]);
  return g;
}

LossResult total_loss(const ModelGraph& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                      const RegularizerConfig& reg) {
  if (images.empty() || images.size() != labels.size()) {
    throw ValidationError("loss needs a non-empty batch with one label per image");
  }
  const std::size_t out = output_layer(model);
  const std::size_t classes = model.output_shape(out)[0];
  LossResult r;
  r.gradients.resize(model.layer_count());
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto& p = model.params(l);
    if (p.weights.empty()) continue;
    r.gradients[l].weights = Tensor(p.weights.shape());
    r.gradients[l].bias.assign(p.bias.size(), 0.0);
  }
  const double inv_n = 1.0 / static_cast<double>(images.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (labels[n] >= classes) throw ValidationError("label " + std::to_string(labels[n]) + " is out of range");
    EvalContext ctx;
    const auto ids = record_forward(ctx, model, images[n]);
    const Tensor& logits = ctx.value(ids[out]);
    Tensor seed;
    r.cross_entropy += cross_entropy(logits, labels[n], seed) * inv_n;
    if (argmax(logits) == labels[n]) ++r.correct;
    for (double& s : seed.values()) s *= inv_n;
    ctx.backward(ids[out], seed);
    for (const auto& [layer, g] : ctx.parameter_gradients()) {
      auto& dst = r.gradients[layer];
      for (std::size_t i = 0; i < g.weights.size(); ++i) dst.weights[i] += g.weights[i];
      for (std::size_t i = 0; i < g.bias.size(); ++i) dst.bias[i] += g.bias[i];
    }
  }
  const double c_group = reg.lambda2 * reg.lambda1;
  const double c_l1 = (1.0 - reg.lambda2) * reg.lambda1;
  for (std::size_t l : model.conv_layers()) {
    const Tensor& w = model.params(l).weights;
    r.reg_group += reg_group_l12(w);
    r.reg_l1 += reg_l1(w);
    if (reg.lambda1 == 0) continue;
    const Tensor gg = reg_group_l12_gradient(w);
    const Tensor g1 = reg_l1_gradient(w);
    auto& dst = r.gradients[l].weights;
    for (std::size_t i = 0; i < w.size(); ++i) dst[i] += c_group * gg[i] + c_l1 * g1[i];
  }
  r.loss = r.cross_entropy;
  if (reg.lambda1 != 0) r.loss += c_group * r.reg_group + c_l1 * r.reg_l1;
  return r;
}

std::vector<LayerSurvival> kernel_survival(const ModelGraph& model, double threshold) {
  std::vector<LayerSurvival> out;
  for (std::size_t l : model.conv_layers()) {
    const Tensor& w = model.params(l).weights;
    const KernelView v = view(w);
    LayerSurvival s;
    s.layer = model.layer(l).name;
    s.kernels = v.out * v.in;
    for (std::size_t co = 0; co < v.out; ++co) {
      for (std::size_t ci = 0; ci < v.in; ++ci) {
        if (kernel_abs_sum(w, v, co, ci) / static_cast<double>(v.area) > threshold) ++s.surviving;
      }
    }
    s.fraction = s.kernels == 0 ? 0.0 : static_cast<double>(s.surviving) / static_cast<double>(s.kernels);
    out.push_back(s);
  }
  return out;
}

std::size_t count_small_kernels(const ModelGraph& model, double threshold) {
  std::size_t small = 0;
  for (std::size_t l : model.conv_layers()) {
    const Tensor& w = model.params(l).weights;
    const KernelView v = view(w);
    for (std::size_t co = 0; co < v.out; ++co) {
      for (std::size_t ci = 0; ci < v.in; ++ci) {
        if (kernel_abs_sum(w, v, co, ci) / static_cast<double>(v.area) < threshold) ++small;
      }
    }
  }
  return small;
}

double accuracy(const ModelGraph& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const std::size_t out = output_layer(model);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    if (argmax(evaluate_layer(model, data.images[n], out)) == data.labels[n]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(ModelGraph model, const Dataset& data, const TrainConfig& cfg, const RegularizerConfig& reg) {
  if (data.size() == 0) throw ValidationError("training dataset is empty");
  if (cfg.batch_size == 0) throw ValidationError("batch size must be positive");
  if (!(cfg.learning_rate > 0)) throw ValidationError("learning rate must be positive");
  if (reg.lambda1 < 0 || reg.lambda2 < 0 || reg.lambda2 > 1) {
    throw ValidationError("regularizer needs lambda1 >= 0 and lambda2 in [0, 1]");
  }
  if (data.images.front().shape() != model.input_shape()) {
    throw ShapeError("input", "dataset images are " + data.images.front().shape().to_string() + " but the model expects " +
                                  model.input_shape().to_string());
  }
  output_layer(model);

  std::vector<LayerParams> velocity(model.layer_count());
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    velocity[l].weights = Tensor(model.params(l).weights.shape());
    velocity[l].bias.assign(model.params(l).bias.size(), 0.0);
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.history.train = cfg;
  result.history.reg = reg;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(order[i], order[j]);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> images;
      std::vector<std::size_t> labels;
      for (std::size_t k = start; k < stop; ++k) {
        images.push_back(data.images[order[k]]);
        labels.push_back(data.labels[order[k]]);
      }
      const LossResult lr = total_loss(model, images, labels, reg);
      if (!std::isfinite(lr.loss)) {
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                              std::to_string(start) + " (learning rate " + std::to_string(cfg.learning_rate) +
                              "); lower the learning rate or regularization strength");
      }
      const double weight = static_cast<double>(stop - start) / static_cast<double>(order.size());
      rec.loss += lr.loss * weight;
      rec.cross_entropy += lr.cross_entropy * weight;
      correct += lr.correct;
      for (std::size_t l = 0; l < model.layer_count(); ++l) {
        auto& p = model.params(l);
        if (p.weights.empty()) continue;
        auto& v = velocity[l];
        const auto& g = lr.gradients[l];
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
          v.weights[i] = cfg.momentum * v.weights[i] + g.weights[i];
          p.weights[i] -= cfg.learning_rate * v.weights[i];
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
          v.bias[i] = cfg.momentum * v.bias[i] + g.bias[i];
          p.bias[i] -= cfg.learning_rate * v.bias[i];
        }
      }
      model.round_parameters_to_float32();
    }
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    rec.survival = kernel_survival(model);
    result.history.epochs.push_back(std::move(rec));
  }
  result.model = std::move(model);
  return result;
}

std::vector<LayerSpec> toy_classifier(std::size_t image_size, std::size_t classes, std::vector<std::size_t> widths) {
  if (widths.size() != 4) throw ValidationError("toy classifier takes four conv widths");
  if (image_size % 4 != 0 || image_size < 8) throw ValidationError("toy classifier needs an image size divisible by 4");
  return {
      LayerSpec::input("input", 1, image_size, image_size),
      LayerSpec::conv("conv1", "input", widths[0], 3, 1, 1),
      LayerSpec::relu("relu1", "conv1"),
      LayerSpec::conv("conv2", "relu1", widths[1], 4, 2, 1),
      LayerSpec::relu("relu2", "conv2"),
      LayerSpec::conv("conv3", "relu2", widths[2], 3, 1, 1),
      LayerSpec::relu("relu3", "conv3"),
      LayerSpec::conv("conv4", "relu3", widths[3], 4, 2, 1),
      LayerSpec::relu("relu4", "conv4"),
      LayerSpec::flatten("flat", "relu4"),
      LayerSpec::linear("fc", "flat", classes),
  };
}

std::string train_config_digest(const TrainConfig& cfg, const RegularizerConfig& reg, const SyntheticDatasetSpec& data) {
  const nlohmann::json j{
      {"learning_rate", cfg.learning_rate}, {"momentum", cfg.momentum},   {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},       {"seed", cfg.seed},           {"lambda1", reg.lambda1},
      {"lambda2", reg.lambda2},             {"dataset", to_string(data.kind)}, {"image_size", data.image_size},
      {"samples_per_class", data.samples_per_class}, {"data_seed", data.seed}, {"noise", data.noise}, {"texture", data.texture},
  };
  return sha256_hex(j.dump());
}

void to_json(nlohmann::json& j, const TrainHistory& h) {
  j = nlohmann::json{
      {"train", {{"learning_rate", h.train.learning_rate},
                 {"momentum", h.train.momentum},
                 {"epochs", h.train.epochs},
                 {"batch_size", h.train.batch_size},
                 {"seed", h.train.seed}}},
      {"regularizer", {{"lambda1", h.reg.lambda1}, {"lambda2", h.reg.lambda2}}},
      {"epochs", nlohmann::json::array()},
  };
  for (const auto& e : h.epochs) {
    nlohmann::json survival = nlohmann::json::array();
    for (const auto& s : e.survival) {
      survival.push_back({{"layer", s.layer}, {"kernels", s.kernels}, {"surviving", s.surviving}, {"fraction", s.fraction}});
    }
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"loss", e.loss},
                           {"cross_entropy", e.cross_entropy},
                           {"accuracy", e.accuracy},
                           {"survival", survival}});
  }
}

}  // namespace circuits
