#pragma once

// Layer arithmetic on single images (C x H x W). These are the primitives the
// evaluation context records; they carry no autodiff state of their own.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "circuits/tensor.hpp"

namespace circuits {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct PoolGeometry {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

/// Output extent of a sliding window. Throws ShapeError naming `dimension`
/// when the window does not fit or the extent is not integral.
std::size_t window_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                          std::size_t padding, const char* dimension);

/// Kernel-level on/off switches for one conv layer. A filter that is off
/// contributes neither kernels nor bias (its output channel is zero).
struct KernelGate {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::vector<std::uint8_t> kernel_on;  // out_channels * in_channels
  std::vector<std::uint8_t> filter_on;  // out_channels

  static KernelGate all_on(std::size_t out_channels, std::size_t in_channels);
  bool kernel(std::size_t co, std::size_t ci) const { return kernel_on[co * in_channels + ci] != 0; }
  bool filter(std::size_t co) const { return filter_on[co] != 0; }
};

/// Cross-correlation. Output channel co is the sum over gated-on input
/// channels of kernel-wise maps plus bias[co]; masked kernels contribute
/// exactly nothing. `gate` may be null.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                      ConvGeometry geometry, const KernelGate* gate = nullptr);

/// The kernel-wise activation map of kernel (co, ci): weights[co, ci] * input[ci]
/// without bias. Rank-2 tensor H' x W'.
Tensor conv2d_kernel_map(const Tensor& input, const Tensor& weights, std::size_t co, std::size_t ci,
                         ConvGeometry geometry);

struct ConvGradients {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

/// Reverse pass of conv2d_forward. Weight gradients are produced for every
/// kernel, gated or not (the gradient with respect to the effective weight);
/// input gradients only flow through gated-on kernels.
ConvGradients conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                              ConvGeometry geometry, const KernelGate* gate = nullptr);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

/// Max pooling; `argmax` receives the flat input index chosen for every
/// output element (first index in scan order on ties).
Tensor max_pool_forward(const Tensor& input, PoolGeometry geometry, std::vector<std::size_t>& argmax);
Tensor max_pool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                         const Tensor& grad_output);

/// Average pooling; padded positions count toward the divisor.
Tensor avg_pool_forward(const Tensor& input, PoolGeometry geometry);
Tensor avg_pool_backward(const Shape& input_shape, PoolGeometry geometry, const Tensor& grad_output);

/// y = W x + b for W of shape units x features and x of any shape with
/// `features` elements. Output is rank 1.
Tensor linear_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias);

struct LinearGradients {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};
LinearGradients linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

Tensor flatten_forward(const Tensor& input);
Tensor add_forward(const Tensor& a, const Tensor& b);

}  // namespace circuits
