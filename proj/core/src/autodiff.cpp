#include "circuits/autodiff.hpp"

#include <string>

#include "circuits/error.hpp"

namespace circuits {

ValueId EvalContext::push(Node n) {
  if (backward_done_) throw ContextError("cannot record operations after the reverse sweep");
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const EvalContext::Node& EvalContext::node(ValueId id) const {
  if (id >= nodes_.size()) throw ContextError("unknown value id " + std::to_string(id));
  return nodes_[id];
}

ValueId EvalContext::input(Tensor value) {
  Node n;
  n.op = Op::input;
  n.value = std::move(value);
  return push(std::move(n));
}

ValueId EvalContext::conv2d(ValueId x, std::size_t param_id, const Tensor& weights, std::span<const double> bias,
                            ConvGeometry geometry, const KernelGate* gate) {
  Node n;
  n.op = Op::conv2d;
  n.a = x;
  n.param_id = param_id;
  n.weights = &weights;
  n.bias = bias;
  n.conv = geometry;
  if (gate) n.gate = *gate;
  n.value = conv2d_forward(node(x).value, weights, bias, geometry, gate);
  return push(std::move(n));
}

ValueId EvalContext::relu(ValueId x) {
  Node n;
  n.op = Op::relu;
  n.a = x;
  n.value = relu_forward(node(x).value);
  return push(std::move(n));
}

ValueId EvalContext::max_pool(ValueId x, PoolGeometry geometry) {
  Node n;
  n.op = Op::max_pool;
  n.a = x;
  n.pool = geometry;
  n.value = max_pool_forward(node(x).value, geometry, n.argmax);
  return push(std::move(n));
}

ValueId EvalContext::avg_pool(ValueId x, PoolGeometry geometry) {
  Node n;
  n.op = Op::avg_pool;
  n.a = x;
  n.pool = geometry;
  n.value = avg_pool_forward(node(x).value, geometry);
  return push(std::move(n));
}

ValueId EvalContext::flatten(ValueId x) {
  Node n;
  n.op = Op::flatten;
  n.a = x;
  n.value = flatten_forward(node(x).value);
  return push(std::move(n));
}

ValueId EvalContext::linear(ValueId x, std::size_t param_id, const Tensor& weights, std::span<const double> bias) {
  Node n;
  n.op = Op::linear;
  n.a = x;
  n.param_id = param_id;
  n.weights = &weights;
  n.bias = bias;
  n.value = linear_forward(node(x).value, weights, bias);
  return push(std::move(n));
}

ValueId EvalContext::add(ValueId a, ValueId b) {
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  n.value = add_forward(node(a).value, node(b).value);
  return push(std::move(n));
}

const Tensor& EvalContext::value(ValueId id) const { return node(id).value; }

void EvalContext::accumulate(ValueId id, const Tensor& g) {
  Tensor& slot = grads_[id];
  if (slot.shape() != g.shape()) {
    // Slots are zero-initialised with the value shape; flatten gradients
    // arrive reshaped by the caller.
    throw ShapeError("gradient", "gradient shape " + g.shape().to_string() + " does not match value " +
                                     slot.shape().to_string());
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

void EvalContext::accumulate_parameter(std::size_t param_id, const Tensor& gw, const std::vector<double>& gb) {
  auto [it, inserted] = param_grads_.try_emplace(param_id);
  if (inserted) {
    it->second.weights = gw;
    it->second.bias = gb;
    return;
  }
  for (std::size_t i = 0; i < gw.size(); ++i) it->second.weights[i] += gw[i];
  for (std::size_t i = 0; i < gb.size(); ++i) it->second.bias[i] += gb[i];
}

void EvalContext::backward(ValueId output, const Tensor& seed) {
  if (!record_gradients_) throw ContextError("context was created without gradient recording");
  if (backward_done_) throw ContextError("backward already ran on this context");
  if (seed.shape() != node(output).value.shape()) {
    throw ShapeError("seed", "seed gradient shape " + seed.shape().to_string() + " does not match output " +
                                 node(output).value.shape().to_string());
  }
  backward_done_ = true;
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const auto& n : nodes_) grads_.emplace_back(n.value.shape(), 0.0);
  accumulate(output, seed);

  for (std::size_t i = output + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    const Tensor& g = grads_[i];
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv2d: {
        const ConvGradients cg = conv2d_backward(nodes_[n.a].value, *n.weights, g, n.conv,
                                                 n.gate ? &*n.gate : nullptr);
        accumulate(n.a, cg.input);
        accumulate_parameter(n.param_id, cg.weights, cg.bias);
        break;
      }
      case Op::relu:
        accumulate(n.a, relu_backward(nodes_[n.a].value, g));
        break;
      case Op::max_pool:
        accumulate(n.a, max_pool_backward(nodes_[n.a].value.shape(), n.argmax, g));
        break;
      case Op::avg_pool:
        accumulate(n.a, avg_pool_backward(nodes_[n.a].value.shape(), n.pool, g));
        break;
      case Op::flatten:
        accumulate(n.a, g.reshaped(nodes_[n.a].value.shape()));
        break;
      case Op::linear: {
        const LinearGradients lg = linear_backward(nodes_[n.a].value, *n.weights, g);
        accumulate(n.a, lg.input.reshaped(nodes_[n.a].value.shape()));
        accumulate_parameter(n.param_id, lg.weights, lg.bias);
        break;
      }
      case Op::add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
    }
  }
}

const Tensor& EvalContext::gradient(ValueId id) const {
  if (!backward_done_) throw ContextError("gradients requested before backward");
  node(id);
  return grads_[id];
}

bool EvalContext::has_parameter_gradient(std::size_t param_id) const {
  return param_grads_.count(param_id) != 0;
}

const ParameterGradient& EvalContext::parameter_gradient(std::size_t param_id) const {
  auto it = param_grads_.find(param_id);
  if (it == param_grads_.end()) {
    throw ContextError("no gradient recorded for parameter " + std::to_string(param_id));
  }
  return it->second;
}

Tensor EvalContext::kernel_activation(ValueId conv_output, std::size_t co, std::size_t ci) const {
  const Node& n = node(conv_output);
  if (n.op != Op::conv2d) throw ContextError("kernel activations exist only for conv outputs");
  const Tensor& x = nodes_[n.a].value;
  if (n.gate && (!n.gate->filter(co) || !n.gate->kernel(co, ci))) {
    return Tensor(Shape{n.value.shape()[1], n.value.shape()[2]}, 0.0);
  }
  return conv2d_kernel_map(x, *n.weights, co, ci, n.conv);
}

Tensor EvalContext::kernel_activation_gradient(ValueId conv_output, std::size_t co, std::size_t ci) const {
  const Node& n = node(conv_output);
  if (n.op != Op::conv2d) throw ContextError("kernel activations exist only for conv outputs");
  if (ci >= n.weights->shape()[1]) throw ShapeError("C_in", "input channel out of range");
  const Tensor& g = gradient(conv_output);
  const std::size_t h = g.shape()[1], w = g.shape()[2];
  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = g[co * h * w + i];
  return out;
}

}  // namespace circuits
