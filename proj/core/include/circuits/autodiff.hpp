#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "circuits/ops.hpp"
#include "circuits/tensor.hpp"

namespace circuits {

using ValueId = std::size_t;

struct ParameterGradient {
  Tensor weights;
  std::vector<double> bias;
};

/// Tape for one forward/backward pair over single-image tensors.
///
/// Operations are recorded in call order together with whatever the reverse
/// sweep needs (inputs, pooling argmax, gates). `backward` visits them in
/// exact reverse order and accumulates gradients additively. Parameter
/// tensors are referenced, not copied: they must outlive the context.
///
/// A context is confined to one thread. Kernel-wise activation maps are not
/// stored; `kernel_activation` rebuilds them from the saved conv input.
class EvalContext {
 public:
  explicit EvalContext(bool record_gradients = true) : record_gradients_(record_gradients) {}

  EvalContext(EvalContext&&) noexcept = default;
  EvalContext& operator=(EvalContext&&) noexcept = default;
  EvalContext(const EvalContext&) = delete;
  EvalContext& operator=(const EvalContext&) = delete;

  ValueId input(Tensor value);
  ValueId conv2d(ValueId x, std::size_t param_id, const Tensor& weights, std::span<const double> bias,
                 ConvGeometry geometry, const KernelGate* gate = nullptr);
  ValueId relu(ValueId x);
  ValueId max_pool(ValueId x, PoolGeometry geometry);
  ValueId avg_pool(ValueId x, PoolGeometry geometry);
  ValueId flatten(ValueId x);
  ValueId linear(ValueId x, std::size_t param_id, const Tensor& weights, std::span<const double> bias);
  ValueId add(ValueId a, ValueId b);

  const Tensor& value(ValueId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool records_gradients() const noexcept { return record_gradients_; }

  /// Seeds d(objective)/d(value(output)) = seed and sweeps in reverse.
  /// Throws ContextError when called a second time or without recording.
  void backward(ValueId output, const Tensor& seed);
  bool has_backward() const noexcept { return backward_done_; }

  /// Gradient with respect to a recorded value (zeros when not reached).
  const Tensor& gradient(ValueId id) const;
  /// Gradients of the parameters registered under `param_id`.
  const ParameterGradient& parameter_gradient(std::size_t param_id) const;
  bool has_parameter_gradient(std::size_t param_id) const;
  const std::map<std::size_t, ParameterGradient>& parameter_gradients() const { return param_grads_; }

  /// Kernel-wise activation map A_{co,ci} of a recorded conv (no bias),
  /// zero when the kernel or its filter is gated off.
  Tensor kernel_activation(ValueId conv_output, std::size_t co, std::size_t ci) const;
  /// Gradient of the objective with respect to A_{co,ci}. Every kernel map
  /// of a filter enters its output additively, so this is channel co of
  /// the output gradient.
  Tensor kernel_activation_gradient(ValueId conv_output, std::size_t co, std::size_t ci) const;

 private:
  enum class Op { input, conv2d, relu, max_pool, avg_pool, flatten, linear, add };

  struct Node {
    Op op = Op::input;
    ValueId a = 0;
    ValueId b = 0;
    Tensor value;
    std::size_t param_id = 0;
    const Tensor* weights = nullptr;
    std::span<const double> bias;
    ConvGeometry conv;
    PoolGeometry pool;
    std::optional<KernelGate> gate;
    std::vector<std::size_t> argmax;
  };

  ValueId push(Node node);
  const Node& node(ValueId id) const;
  void accumulate(ValueId id, const Tensor& g);
  void accumulate_parameter(std::size_t param_id, const Tensor& gw, const std::vector<double>& gb);

  bool record_gradients_ = true;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::map<std::size_t, ParameterGradient> param_grads_;
};

}  // namespace circuits
