#include "s4t/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "s4t/error.hpp"

namespace s4t {

InterpolationResult interpolate(const BinaryMap& r, const Tensor& probs, std::size_t n, std::size_t k) {
  if (k < 3 || k % 2 == 0) throw ConfigError("interpolation window k must be odd and at least 3, got " + std::to_string(k));
  if (probs.rank() != 4 || n >= probs.dim(0) || probs.dim(2) != r.height || probs.dim(3) != r.width) {
    throw ShapeError("interpolate: probabilities " + shape_str(probs.shape()) + " do not match the reliability map");
  }
  const std::size_t C = probs.dim(1), H = r.height, W = r.width, plane = H * W, half = k / 2;
  const float* p = probs.ptr() + n * C * plane;
  const float denom = static_cast<float>(k * k - 1);

  InterpolationResult out{LabelMap(H, W, kNoLabel), std::vector<float>(plane, 0.0f),
                          std::vector<std::int32_t>(plane, 0), k};
  std::vector<double> acc(C);
  for (std::size_t i = 0; i < H; ++i) {
    const std::size_t l0 = i >= half ? i - half : 0, l1 = std::min(H - 1, i + half);
    for (std::size_t j = 0; j < W; ++j) {
      if (r.at(i, j)) continue;
      const std::size_t m0 = j >= half ? j - half : 0, m1 = std::min(W - 1, j + half);
      std::fill(acc.begin(), acc.end(), 0.0);
      std::int32_t count = 0;
      for (std::size_t l = l0; l <= l1; ++l)
        for (std::size_t m = m0; m <= m1; ++m) {
          if (!r.at(l, m)) continue;
          ++count;
          for (std::size_t c = 0; c < C; ++c) acc[c] += p[c * plane + l * W + m];
        }
      const std::size_t idx = i * W + j;
      out.count[idx] = count;
      if (count == 0) continue;
      out.w_int[idx] = static_cast<float>(count) / denom;
      out.y_int.labels[idx] = static_cast<Label>(std::max_element(acc.begin(), acc.end()) - acc.begin());
    }
  }
  return out;
}

ClassStats::ClassStats(std::size_t num_classes, std::size_t capacity, double eta)
    : capacity_(capacity), eta_(eta), q_(num_classes), lambda_(num_classes) {
  if (num_classes < 2) throw ConfigError("ClassStats needs at least 2 classes");
  if (capacity == 0) throw ConfigError("Q must be at least 1");
  if (!(eta >= 0.0)) throw ConfigError("eta must be non-negative");
  recompute();
}

void ClassStats::update(std::span<const LabelMap> labels) {
  std::vector<std::uint64_t> counts(q_.size(), 0);
  for (const LabelMap& m : labels)
    for (Label y : m.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= counts.size()) throw Error("ClassStats: label out of range");
      ++counts[static_cast<std::size_t>(y)];
    }
  update_counts(std::move(counts));
}

void ClassStats::update_counts(std::vector<std::uint64_t> counts) {
  if (counts.size() != q_.size()) throw ShapeError("ClassStats: count vector has wrong length");
  history_.push_back(std::move(counts));
  if (history_.size() > capacity_) history_.pop_front();
  recompute();
}

void ClassStats::recompute() {
  const std::size_t C = q_.size();
  std::vector<double> total(C, 0.0);
  double sum = 0.0;
  for (const auto& counts : history_)
    for (std::size_t c = 0; c < C; ++c) {
      total[c] += static_cast<double>(counts[c]);
      sum += static_cast<double>(counts[c]);
    }
  for (std::size_t c = 0; c < C; ++c) {
    q_[c] = sum > 0.0 ? total[c] / sum : 1.0 / static_cast<double>(C);
    lambda_[c] = -eta_ * std::log(std::max(q_[c], kFrequencyFloor));
  }
}

}  // namespace s4t
