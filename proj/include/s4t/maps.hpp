#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "s4t/tensor.hpp"

namespace s4t {

using Label = std::int32_t;

// Per-pixel hard labels, row-major H×W.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Label> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, Label fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::size_t size() const { return labels.size(); }
  Label& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  Label at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Per-pixel 0/1 flags, row-major H×W.
struct BinaryMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMap() = default;
  BinaryMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

  std::size_t size() const { return values.size(); }
  std::uint8_t& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t count() const;
  double mean() const { return values.empty() ? 0.0 : static_cast<double>(count()) / values.size(); }

  friend bool operator==(const BinaryMap&, const BinaryMap&) = default;
};

// Argmax over the channel axis of image `n` in an N×C×H×W tensor; ties go to
// the lowest class index.
LabelMap argmax_channels(const Tensor& probs, std::size_t n);
std::vector<LabelMap> argmax_batch(const Tensor& probs);

// Maximum channel value per pixel of image `n`.
std::vector<float> max_channels(const Tensor& probs, std::size_t n);

}  // namespace s4t
