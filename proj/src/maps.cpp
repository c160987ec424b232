#include "s4t/maps.hpp"

#include <algorithm>

#include "s4t/error.hpp"

namespace s4t {

std::size_t BinaryMap::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

void check_probs(const Tensor& probs, std::size_t n) {
  if (probs.rank() != 4) throw ShapeError("expected N×C×H×W probabilities, got " + shape_str(probs.shape()));
  if (n >= probs.dim(0)) throw ShapeError("image index out of range");
}

}  // namespace

LabelMap argmax_channels(const Tensor& probs, std::size_t n) {
  check_probs(probs, n);
  const std::size_t C = probs.dim(1), H = probs.dim(2), W = probs.dim(3), plane = H * W;
  LabelMap out(H, W);
  const float* base = probs.ptr() + n * C * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    Label best = 0;
    float best_v = base[i];
    for (std::size_t c = 1; c < C; ++c) {
      const float v = base[c * plane + i];
      if (v > best_v) {
        best_v = v;
        best = static_cast<Label>(c);
      }
    }
    out.labels[i] = best;
  }
  return out;
}

std::vector<LabelMap> argmax_batch(const Tensor& probs) {
  check_probs(probs, 0);
  std::vector<LabelMap> out;
  out.reserve(probs.dim(0));
  for (std::size_t n = 0; n < probs.dim(0); ++n) out.push_back(argmax_channels(probs, n));
  return out;
}

std::vector<float> max_channels(const Tensor& probs, std::size_t n) {
  check_probs(probs, n);
  const std::size_t C = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  std::vector<float> out(plane);
  const float* base = probs.ptr() + n * C * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    float m = base[i];
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, base[c * plane + i]);
    out[i] = m;
  }
  return out;
}

}  // namespace s4t
