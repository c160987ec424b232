#include "s4t/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "s4t/error.hpp"

namespace s4t {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (std::size_t d : t.shape()) mix(d);
  for (float v : t.data()) mix(std::bit_cast<std::uint32_t>(v));
  return h;
}

Tensor slice_batch(const Tensor& t, std::size_t first, std::size_t count) {
  if (t.rank() == 0 || first + count > t.dim(0)) {
    throw ShapeError("batch slice out of range for " + shape_str(t.shape()));
  }
  Shape shape = t.shape();
  const std::size_t per = t.numel() / shape[0];
  shape[0] = count;
  std::vector<float> data(t.data().begin() + static_cast<std::ptrdiff_t>(first * per),
                          t.data().begin() + static_cast<std::ptrdiff_t>((first + count) * per));
  return Tensor(std::move(shape), std::move(data));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty batch");
  const Shape& item_shape = items[0].shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  std::vector<float> data;
  data.reserve(shape_numel(shape));
  for (const Tensor& item : items) {
    if (item.shape() != item_shape) {
      throw ShapeError("stack: mismatched shapes " + shape_str(item_shape) + " vs " + shape_str(item.shape()));
    }
    data.insert(data.end(), item.data().begin(), item.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace s4t
