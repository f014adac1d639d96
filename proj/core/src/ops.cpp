#include "circuits/ops.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "circuits/error.hpp"

namespace circuits {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.shape().rank() != rank) {
    throw ShapeError(what, std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                               t.shape().to_string());
  }
}

// Range of output positions o (in [0, out)) whose input index o*stride + k - pad is in [0, in).
struct ValidRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

ValidRange valid_outputs(std::size_t in, std::size_t out, std::size_t stride, std::size_t k, std::size_t pad) {
  // need o*stride + k >= pad and o*stride + k - pad < in
  std::size_t begin = 0;
  if (k < pad) begin = (pad - k + stride - 1) / stride;
  std::size_t end = 0;
  if (in + pad > k) end = std::min(out, (in + pad - k - 1) / stride + 1);
  if (begin > end) begin = end;
  return {begin, end};
}

void check_conv_shapes(const Tensor& input, const Tensor& weights, std::size_t bias_size) {
  require_rank(input, 3, "input");
  require_rank(weights, 4, "weights");
  if (weights.shape()[1] != input.shape()[0]) {
    throw ShapeError("C_in", "conv weights expect " + std::to_string(weights.shape()[1]) +
                                 " input channels, input has " + std::to_string(input.shape()[0]));
  }
  if (bias_size != weights.shape()[0]) {
    throw ShapeError("C_out", "conv bias has " + std::to_string(bias_size) + " entries for " +
                                  std::to_string(weights.shape()[0]) + " filters");
  }
}

void check_gate(const KernelGate* gate, std::size_t co, std::size_t ci) {
  if (gate && (gate->out_channels != co || gate->in_channels != ci ||
               gate->kernel_on.size() != co * ci || gate->filter_on.size() != co)) {
    throw ShapeError("kernel_mask", "kernel mask is not indexed by (C_out=" + std::to_string(co) +
                                        ", C_in=" + std::to_string(ci) + ")");
  }
}

}  // namespace

std::size_t window_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding,
                          const char* dimension) {
  if (stride == 0) throw ShapeError(dimension, std::string("stride must be positive along ") + dimension);
  if (kernel == 0) throw ShapeError(dimension, std::string("kernel extent must be positive along ") + dimension);
  const std::size_t padded = input + 2 * padding;
  if (kernel > padded) {
    throw ShapeError(dimension, std::string("window of ") + std::to_string(kernel) + " exceeds padded input " +
                                    std::to_string(padded) + " along " + dimension);
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError(dimension, std::string("non-integral output extent along ") + dimension + ": (" +
                                    std::to_string(input) + " + 2*" + std::to_string(padding) + " - " +
                                    std::to_string(kernel) + ") / " + std::to_string(stride));
  }
  return (padded - kernel) / stride + 1;
}

KernelGate KernelGate::all_on(std::size_t out_channels, std::size_t in_channels) {
  KernelGate g;
  g.out_channels = out_channels;
  g.in_channels = in_channels;
  g.kernel_on.assign(out_channels * in_channels, 1);
  g.filter_on.assign(out_channels, 1);
  return g;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                      ConvGeometry geo, const KernelGate* gate) {
  check_conv_shapes(input, weights, bias.size());
  const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t cout = weights.shape()[0], kh = weights.shape()[2], kw = weights.shape()[3];
  check_gate(gate, cout, cin);
  const std::size_t oh = window_extent(h, kh, geo.stride, geo.padding, "H");
  const std::size_t ow = window_extent(w, kw, geo.stride, geo.padding, "W");

  Tensor out(Shape{cout, oh, ow}, 0.0);
  const double* x = input.data().data();
  const double* wt = weights.data().data();
  for (std::size_t co = 0; co < cout; ++co) {
    double* y = out.data().data() + co * oh * ow;
    if (gate && !gate->filter(co)) continue;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      if (gate && !gate->kernel(co, ci)) continue;
      const double* xc = x + ci * h * w;
      const double* k = wt + (co * cin + ci) * kh * kw;
      for (std::size_t a = 0; a < kh; ++a) {
        const ValidRange rows = valid_outputs(h, oh, geo.stride, a, geo.padding);
        for (std::size_t b = 0; b < kw; ++b) {
          const double wv = k[a * kw + b];
          const ValidRange cols = valid_outputs(w, ow, geo.stride, b, geo.padding);
          for (std::size_t r = rows.begin; r < rows.end; ++r) {
            const double* xrow = xc + (r * geo.stride + a - geo.padding) * w;
            double* yrow = y + r * ow;
            for (std::size_t c = cols.begin; c < cols.end; ++c) {
              yrow[c] += wv * xrow[c * geo.stride + b - geo.padding];
            }
          }
        }
      }
    }
    const double bv = bias[co];
    for (std::size_t i = 0; i < oh * ow; ++i) y[i] += bv;
  }
  return out;
}

Tensor conv2d_kernel_map(const Tensor& input, const Tensor& weights, std::size_t co, std::size_t ci,
                         ConvGeometry geo) {
  require_rank(input, 3, "input");
  require_rank(weights, 4, "weights");
  const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t kh = weights.shape()[2], kw = weights.shape()[3];
  if (co >= weights.shape()[0] || ci >= cin || weights.shape()[1] != cin) {
    throw ShapeError("kernel", "kernel (" + std::to_string(co) + "," + std::to_string(ci) + ") out of range");
  }
  const std::size_t oh = window_extent(h, kh, geo.stride, geo.padding, "H");
  const std::size_t ow = window_extent(w, kw, geo.stride, geo.padding, "W");
  Tensor out(Shape{oh, ow}, 0.0);
  const double* xc = input.data().data() + ci * h * w;
  const double* k = weights.data().data() + (co * cin + ci) * kh * kw;
  double* y = out.data().data();
  for (std::size_t a = 0; a < kh; ++a) {
    const ValidRange rows = valid_outputs(h, oh, geo.stride, a, geo.padding);
    for (std::size_t b = 0; b < kw; ++b) {
      const double wv = k[a * kw + b];
      const ValidRange cols = valid_outputs(w, ow, geo.stride, b, geo.padding);
      for (std::size_t r = rows.begin; r < rows.end; ++r) {
        const double* xrow = xc + (r * geo.stride + a - geo.padding) * w;
        for (std::size_t c = cols.begin; c < cols.end; ++c) {
          y[r * ow + c] += wv * xrow[c * geo.stride + b - geo.padding];
        }
      }
    }
  }
  return out;
}

ConvGradients conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output,
                              ConvGeometry geo, const KernelGate* gate) {
  check_conv_shapes(input, weights, weights.shape()[0]);
  const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t cout = weights.shape()[0], kh = weights.shape()[2], kw = weights.shape()[3];
  check_gate(gate, cout, cin);
  const std::size_t oh = window_extent(h, kh, geo.stride, geo.padding, "H");
  const std::size_t ow = window_extent(w, kw, geo.stride, geo.padding, "W");
  if (grad_output.shape() != Shape{cout, oh, ow}) {
    throw ShapeError("grad_output", "conv gradient shape " + grad_output.shape().to_string() +
                                        " does not match output " + Shape{cout, oh, ow}.to_string());
  }

  ConvGradients g{Tensor(input.shape(), 0.0), Tensor(weights.shape(), 0.0), std::vector<double>(cout, 0.0)};
  const double* x = input.data().data();
  const double* wt = weights.data().data();
  const double* gy = grad_output.data().data();
  double* gx = g.input.data().data();
  double* gw = g.weights.data().data();

  for (std::size_t co = 0; co < cout; ++co) {
    const double* gyc = gy + co * oh * ow;
    const bool filter_on = !gate || gate->filter(co);
    if (filter_on) {
      double s = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) s += gyc[i];
      g.bias[co] = s;
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const bool kernel_on = filter_on && (!gate || gate->kernel(co, ci));
      const double* xc = x + ci * h * w;
      double* gxc = gx + ci * h * w;
      const double* k = wt + (co * cin + ci) * kh * kw;
      double* gk = gw + (co * cin + ci) * kh * kw;
      for (std::size_t a = 0; a < kh; ++a) {
        const ValidRange rows = valid_outputs(h, oh, geo.stride, a, geo.padding);
        for (std::size_t b = 0; b < kw; ++b) {
          const ValidRange cols = valid_outputs(w, ow, geo.stride, b, geo.padding);
          const double wv = k[a * kw + b];
          double acc = 0.0;
          for (std::size_t r = rows.begin; r < rows.end; ++r) {
            const std::size_t xr = (r * geo.stride + a - geo.padding) * w;
            const double* grow = gyc + r * ow;
            for (std::size_t c = cols.begin; c < cols.end; ++c) {
              const std::size_t xi = xr + c * geo.stride + b - geo.padding;
              acc += grow[c] * xc[xi];
              if (kernel_on) gxc[xi] += grow[c] * wv;
            }
          }
          gk[a * kw + b] = acc;
        }
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (input.shape() != grad_output.shape()) throw ShapeError("grad_output", "relu gradient shape mismatch");
  Tensor out(input.shape());
  // subgradient at 0 is 0
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
  return out;
}

Tensor max_pool_forward(const Tensor& input, PoolGeometry geo, std::vector<std::size_t>& argmax) {
  require_rank(input, 3, "input");
  const std::size_t ch = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t oh = window_extent(h, geo.kernel, geo.stride, geo.padding, "H");
  const std::size_t ow = window_extent(w, geo.kernel, geo.stride, geo.padding, "W");
  Tensor out(Shape{ch, oh, ow});
  argmax.assign(ch * oh * ow, 0);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_index = std::numeric_limits<std::size_t>::max();
        for (std::size_t a = 0; a < geo.kernel; ++a) {
          const std::size_t y = r * geo.stride + a;
          if (y < geo.padding || y - geo.padding >= h) continue;
          for (std::size_t b = 0; b < geo.kernel; ++b) {
            const std::size_t x = q * geo.stride + b;
            if (x < geo.padding || x - geo.padding >= w) continue;
            const std::size_t idx = (c * h + (y - geo.padding)) * w + (x - geo.padding);
            if (best_index == std::numeric_limits<std::size_t>::max() || input[idx] > best) {
              best = input[idx];
              best_index = idx;
            }
          }
        }
        const std::size_t o = (c * oh + r) * ow + q;
        out[o] = best;
        argmax[o] = best_index;
      }
    }
  }
  return out;
}

Tensor max_pool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                         const Tensor& grad_output) {
  if (argmax.size() != grad_output.size()) throw ShapeError("grad_output", "max-pool gradient shape mismatch");
  Tensor gx(input_shape, 0.0);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += grad_output[o];
  return gx;
}

Tensor avg_pool_forward(const Tensor& input, PoolGeometry geo) {
  require_rank(input, 3, "input");
  const std::size_t ch = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t oh = window_extent(h, geo.kernel, geo.stride, geo.padding, "H");
  const std::size_t ow = window_extent(w, geo.kernel, geo.stride, geo.padding, "W");
  const double inv = 1.0 / static_cast<double>(geo.kernel * geo.kernel);
  Tensor out(Shape{ch, oh, ow}, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        double s = 0.0;
        for (std::size_t a = 0; a < geo.kernel; ++a) {
          const std::size_t y = r * geo.stride + a;
          if (y < geo.padding || y - geo.padding >= h) continue;
          for (std::size_t b = 0; b < geo.kernel; ++b) {
            const std::size_t x = q * geo.stride + b;
            if (x < geo.padding || x - geo.padding >= w) continue;
            s += input.at(c, y - geo.padding, x - geo.padding);
          }
        }
        out.at(c, r, q) = s * inv;
      }
    }
  }
  return out;
}

Tensor avg_pool_backward(const Shape& input_shape, PoolGeometry geo, const Tensor& grad_output) {
  const std::size_t ch = input_shape[0], h = input_shape[1], w = input_shape[2];
  const std::size_t oh = grad_output.shape()[1], ow = grad_output.shape()[2];
  const double inv = 1.0 / static_cast<double>(geo.kernel * geo.kernel);
  Tensor gx(input_shape, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        const double g = grad_output.at(c, r, q) * inv;
        for (std::size_t a = 0; a < geo.kernel; ++a) {
          const std::size_t y = r * geo.stride + a;
          if (y < geo.padding || y - geo.padding >= h) continue;
          for (std::size_t b = 0; b < geo.kernel; ++b) {
            const std::size_t x = q * geo.stride + b;
            if (x < geo.padding || x - geo.padding >= w) continue;
            gx.at(c, y - geo.padding, x - geo.padding) += g;
          }
        }
      }
    }
  }
  return gx;
}

Tensor linear_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias) {
  require_rank(weights, 2, "weights");
  const std::size_t units = weights.shape()[0], features = weights.shape()[1];
  if (input.size() != features) {
    throw ShapeError("features", "linear layer expects " + std::to_string(features) + " features, got " +
                                     std::to_string(input.size()));
  }
  if (bias.size() != units) throw ShapeError("units", "linear bias size does not match units");
  Tensor out(Shape{units});
  for (std::size_t u = 0; u < units; ++u) {
    double s = 0.0;
    const double* row = weights.data().data() + u * features;
    for (std::size_t f = 0; f < features; ++f) s += row[f] * input[f];
    out[u] = s + bias[u];
  }
  return out;
}

LinearGradients linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  const std::size_t units = weights.shape()[0], features = weights.shape()[1];
  if (grad_output.size() != units) throw ShapeError("units", "linear gradient shape mismatch");
  LinearGradients g{Tensor(input.shape(), 0.0), Tensor(weights.shape(), 0.0), std::vector<double>(units)};
  for (std::size_t u = 0; u < units; ++u) {
    const double gu = grad_output[u];
    g.bias[u] = gu;
    const double* row = weights.data().data() + u * features;
    double* grow = g.weights.data().data() + u * features;
    for (std::size_t f = 0; f < features; ++f) {
      grow[f] = gu * input[f];
      g.input[f] += gu * row[f];
    }
  }
  return g;
}

Tensor flatten_forward(const Tensor& input) { return input.reshaped(Shape{input.size()}); }

Tensor add_forward(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add", "add requires equal shapes, got " + a.shape().to_string() + " and " +
                                b.shape().to_string());
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace circuits
