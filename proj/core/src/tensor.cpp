#include "circuits/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "circuits/error.hpp"

namespace circuits {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() > kMaxRank) {
    throw ShapeError("rank", "tensor rank " + std::to_string(dims_.size()) + " exceeds 4");
  }
}

std::size_t Shape::elements() const noexcept {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.elements(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.elements()) {
    throw ShapeError("elements", "data length " + std::to_string(data_.size()) +
                                     " does not match shape " + shape_.to_string());
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.elements() != data_.size()) {
    throw ShapeError("elements", "cannot reshape " + shape_.to_string() + " to " + shape.to_string());
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(std::size_t index) const {
  if (shape_.rank() == 0 || index >= shape_[0]) {
    throw ShapeError("axis0", "slice index out of range for " + shape_.to_string());
  }
  std::vector<std::size_t> dims(shape_.dims().begin() + 1, shape_.dims().end());
  Shape inner(dims);
  const std::size_t n = inner.elements();
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(index * n),
                          data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor(std::move(inner), std::move(out));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("axis0", "cannot stack an empty tensor list");
  const Shape& inner = items.front().shape();
  std::vector<std::size_t> dims{items.size()};
  dims.insert(dims.end(), inner.dims().begin(), inner.dims().end());
  std::vector<double> data;
  data.reserve(items.size() * inner.elements());
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack", "cannot stack " + t.shape().to_string() + " with " + inner.to_string());
    }
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(Shape(std::move(dims)), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape", "max_abs_diff on " + a.shape().to_string() + " vs " + b.shape().to_string());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace circuits
