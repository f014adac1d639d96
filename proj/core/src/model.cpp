#include "circuits/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <random>

#include "circuits/error.hpp"
#include "circuits/model_io.hpp"

namespace circuits {

namespace {

const std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::input, "input"},     {LayerKind::conv, "conv"},       {LayerKind::relu, "relu"},
    {LayerKind::maxpool, "maxpool"}, {LayerKind::avgpool, "avgpool"}, {LayerKind::flatten, "flatten"},
    {LayerKind::linear, "linear"},   {LayerKind::add, "add"},
};

std::size_t expected_inputs(LayerKind kind) {
  switch (kind) {
    case LayerKind::input:
      return 0;
    case LayerKind::add:
      return 2;
    default:
      return 1;
  }
}

Shape infer_shape(const LayerSpec& spec, const std::vector<const Shape*>& in) {
  auto need_rank3 = [&](const Shape& s) {
    if (s.rank() != 3) {
      throw ShapeError("rank", "layer '" + spec.name + "' needs a C x H x W input, got " + s.to_string());
    }
  };
  switch (spec.kind) {
    case LayerKind::input:
      if (spec.channels == 0 || spec.height == 0 || spec.width == 0) {
        throw ShapeError("input", "input layer '" + spec.name + "' has an empty extent");
      }
      return Shape{spec.channels, spec.height, spec.width};
    case LayerKind::conv: {
      const Shape& s = *in[0];
      need_rank3(s);
      if (spec.channels == 0 || spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride == 0) {
        throw ShapeError("C_out", "conv layer '" + spec.name + "' needs positive channels, kernel and stride");
      }
      return Shape{spec.channels, window_extent(s[1], spec.kernel_h, spec.stride, spec.padding, "H"),
                   window_extent(s[2], spec.kernel_w, spec.stride, spec.padding, "W")};
    }
    case LayerKind::relu:
      return *in[0];
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      const Shape& s = *in[0];
      need_rank3(s);
      if (spec.kernel_h == 0 || spec.kernel_h != spec.kernel_w || spec.stride == 0) {
        throw ShapeError("K", "pooling layer '" + spec.name + "' needs a square positive window");
      }
      return Shape{s[0], window_extent(s[1], spec.kernel_h, spec.stride, spec.padding, "H"),
                   window_extent(s[2], spec.kernel_w, spec.stride, spec.padding, "W")};
    }
    case LayerKind::flatten:
      return Shape{in[0]->elements()};
    case LayerKind::linear:
      if (spec.units == 0) throw ShapeError("units", "linear layer '" + spec.name + "' has zero units");
      return Shape{spec.units};
    case LayerKind::add:
      if (*in[0] != *in[1]) {
        throw ShapeError("add", "add layer '" + spec.name + "' joins " + in[0]->to_string() + " and " +
                                    in[1]->to_string());
      }
      return *in[0];
  }
  throw GraphError("unknown layer kind");
}

double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

const char* to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  throw GraphError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::input(std::string name, std::size_t channels, std::size_t height, std::size_t width) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::input;
  s.channels = channels;
  s.height = height;
  s.width = width;
  return s;
}

LayerSpec LayerSpec::conv(std::string name, std::string from, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::conv;
  s.inputs = {std::move(from)};
  s.channels = out_channels;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::relu(std::string name, std::string from) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::relu;
  s.inputs = {std::move(from)};
  return s;
}

LayerSpec LayerSpec::maxpool(std::string name, std::string from, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::maxpool;
  s.inputs = {std::move(from)};
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::avgpool(std::string name, std::string from, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  LayerSpec s = maxpool(std::move(name), std::move(from), kernel, stride, padding);
  s.kind = LayerKind::avgpool;
  return s;
}

LayerSpec LayerSpec::flatten(std::string name, std::string from) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::flatten;
  s.inputs = {std::move(from)};
  return s;
}

LayerSpec LayerSpec::linear(std::string name, std::string from, std::size_t units) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::linear;
  s.inputs = {std::move(from)};
  s.units = units;
  return s;
}

LayerSpec LayerSpec::add(std::string name, std::string a, std::string b) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::add;
  s.inputs = {std::move(a), std::move(b)};
  return s;
}

void to_json(nlohmann::json& j, const LayerSpec& spec) {
  j = nlohmann::json{{"name", spec.name}, {"kind", to_string(spec.kind)}, {"inputs", spec.inputs}};
  switch (spec.kind) {
    case LayerKind::input:
      j["channels"] = spec.channels;
      j["height"] = spec.height;
      j["width"] = spec.width;
      break;
    case LayerKind::conv:
      j["channels"] = spec.channels;
      [[fallthrough]];
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      j["kernel"] = {spec.kernel_h, spec.kernel_w};
      j["stride"] = spec.stride;
      j["padding"] = spec.padding;
      break;
    case LayerKind::linear:
      j["units"] = spec.units;
      break;
    default:
      break;
  }
}

void from_json(const nlohmann::json& j, LayerSpec& spec) {
  try {
    spec = LayerSpec{};
    spec.name = j.at("name").get<std::string>();
    spec.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    spec.inputs = j.value("inputs", std::vector<std::string>{});
    spec.channels = j.value("channels", std::size_t{0});
    spec.height = j.value("height", std::size_t{0});
    spec.width = j.value("width", std::size_t{0});
    if (j.contains("kernel")) {
      const auto& k = j.at("kernel");
      spec.kernel_h = k.at(0).get<std::size_t>();
      spec.kernel_w = k.at(1).get<std::size_t>();
    }
    spec.stride = j.value("stride", std::size_t{1});
    spec.padding = j.value("padding", std::size_t{0});
    spec.units = j.value("units", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed layer spec: ") + e.what());
  }
}

ConvGeometry conv_geometry(const LayerSpec& spec) { return ConvGeometry{spec.stride, spec.padding}; }

PoolGeometry pool_geometry(const LayerSpec& spec) { return PoolGeometry{spec.kernel_h, spec.stride, spec.padding}; }

ModelGraph ModelGraph::build(std::vector<LayerSpec> layers, ModelMetadata metadata) {
  if (layers.empty()) throw GraphError("model has no layers");
  std::map<std::string, std::size_t> by_name;
  std::size_t input_count = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.name.empty()) throw GraphError("layer " + std::to_string(i) + " has an empty name");
    if (!by_name.emplace(l.name, i).second) throw GraphError("duplicate layer name '" + l.name + "'");
    if (l.kind == LayerKind::input) ++input_count;
    if (l.inputs.size() != expected_inputs(l.kind)) {
      throw GraphError("layer '" + l.name + "' (" + to_string(l.kind) + ") expects " +
                       std::to_string(expected_inputs(l.kind)) + " inputs, got " +
                       std::to_string(l.inputs.size()));
    }
  }
  if (input_count != 1) throw GraphError("model needs exactly one input layer");

  // Kahn's algorithm; among ready layers the earliest declared goes first.
  std::vector<std::vector<std::size_t>> consumers(layers.size());
  std::vector<std::size_t> indegree(layers.size(), 0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& from : layers[i].inputs) {
      auto it = by_name.find(from);
      if (it == by_name.end()) {
        throw GraphError("layer '" + layers[i].name + "' reads unknown layer '" + from + "'");
      }
      consumers[it->second].push_back(i);
      ++indegree[i];
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (std::size_t c : consumers[i]) {
      if (--indegree[c] == 0) ready.push(c);
    }
  }
  if (order.size() != layers.size()) throw GraphError("model graph contains a cycle");

  ModelGraph g;
  g.metadata_ = std::move(metadata);
  std::map<std::string, std::size_t> position;
  for (std::size_t i : order) {
    position[layers[i].name] = g.layers_.size();
    g.layers_.push_back(std::move(layers[i]));
  }
  const std::size_t n = g.layers_.size();
  g.input_indices_.resize(n);
  g.shapes_.resize(n);
  g.params_.resize(n);
  g.kernel_offsets_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& spec = g.layers_[i];
    std::vector<const Shape*> in;
    for (const auto& from : spec.inputs) {
      g.input_indices_[i].push_back(position.at(from));
      in.push_back(&g.shapes_[position.at(from)]);
    }
    g.shapes_[i] = infer_shape(spec, in);
    if (spec.kind == LayerKind::conv) {
      const std::size_t cin = (*in[0])[0];
      g.params_[i].weights = Tensor(Shape{spec.channels, cin, spec.kernel_h, spec.kernel_w});
      g.params_[i].bias.assign(spec.channels, 0.0);
      g.kernel_offsets_[i] = g.kernel_total_;
      g.kernel_layers_.push_back(i);
      g.kernel_total_ += spec.channels * cin;
    } else if (spec.kind == LayerKind::linear) {
      g.params_[i].weights = Tensor(Shape{spec.units, in[0]->elements()});
      g.params_[i].bias.assign(spec.units, 0.0);
    }
  }
  return g;
}

std::size_t ModelGraph::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw GraphError("unknown layer '" + name + "'");
}

bool ModelGraph::has_layer(const std::string& name) const {
  return std::any_of(layers_.begin(), layers_.end(), [&](const LayerSpec& l) { return l.name == name; });
}

std::vector<std::size_t> ModelGraph::consumers(std::size_t index) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t j : input_indices_[i]) {
      if (j == index) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

std::vector<std::size_t> ModelGraph::output_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (consumers(i).empty()) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ModelGraph::conv_layers() const { return kernel_layers_; }

std::size_t ModelGraph::kernel_index(std::size_t layer, std::size_t out, std::size_t in) const {
  if (layer >= layers_.size() || layers_[layer].kind != LayerKind::conv) {
    throw GraphError("layer " + std::to_string(layer) + " is not a conv layer");
  }
  const Shape& w = params_[layer].weights.shape();
  if (out >= w[0] || in >= w[1]) {
    throw GraphError("kernel (" + std::to_string(out) + "," + std::to_string(in) + ") outside the " +
                     std::to_string(w[0]) + "x" + std::to_string(w[1]) + " grid of '" + layers_[layer].name +
                     "'");
  }
  return kernel_offsets_[layer] + out * w[1] + in;
}

std::size_t ModelGraph::kernel_index(const KernelId& id) const {
  return kernel_index(layer_index(id.layer), id.out, id.in);
}

ModelGraph::KernelLocation ModelGraph::locate_kernel(std::size_t flat) const {
  if (flat >= kernel_total_) throw GraphError("kernel index " + std::to_string(flat) + " out of range");
  auto it = std::upper_bound(kernel_layers_.begin(), kernel_layers_.end(), flat,
                             [&](std::size_t f, std::size_t layer) { return f < kernel_offsets_[layer]; });
  const std::size_t layer = *std::prev(it);
  const std::size_t local = flat - kernel_offsets_[layer];
  const std::size_t cin = params_[layer].weights.shape()[1];
  return KernelLocation{layer, local / cin, local % cin};
}

KernelId ModelGraph::kernel_id(std::size_t flat) const {
  const KernelLocation loc = locate_kernel(flat);
  return KernelId{layers_[loc.layer].name, loc.out, loc.in};
}

void ModelGraph::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    if (p.weights.empty()) continue;
    const Shape& s = p.weights.shape();
    const std::size_t fan_in = p.weights.size() / s[0];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& w : p.weights.values()) w = normal(rng);
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
  }
  metadata_.seed = seed;
  round_parameters_to_float32();
}

void ModelGraph::round_parameters_to_float32() {
  for (auto& p : params_) {
    for (double& w : p.weights.values()) w = to_float32(w);
    for (double& b : p.bias) b = to_float32(b);
  }
}

std::string ModelGraph::digest() const { return model_digest(*this); }

}  // namespace circuits
