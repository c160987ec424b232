#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "s4t/maps.hpp"
#include "s4t/tensor.hpp"

namespace s4t {

inline constexpr Label kNoLabel = -1;
inline constexpr double kFrequencyFloor = 1e-6;

struct InterpolationResult {
  LabelMap y_int;                    // kNoLabel where w_int == 0 or the pixel is reliable
  std::vector<float> w_int;          // N / (k² − 1)
  std::vector<std::int32_t> count;   // N: reliable cells in the clipped k×k window
  std::size_t k = 3;
};

// Selective label interpolation for image `n` of N×C×H×W probabilities.
// Only pixels with r == 0 are evaluated; reliable pixels get w_int = 0,
// count 0 and kNoLabel. Window sums are taken in double and the argmax
// prefers the lowest class on ties.
InterpolationResult interpolate(const BinaryMap& r, const Tensor& probs, std::size_t n, std::size_t k);

// Running class frequencies over the last Q batches and the derived weights
// λ_c = −η·log(max(q_c, 1e-6)).
class ClassStats {
 public:
  ClassStats(std::size_t num_classes, std::size_t capacity, double eta);

  void update(std::span<const LabelMap> labels);
  void update_counts(std::vector<std::uint64_t> counts);

  std::size_t num_classes() const { return q_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t history_size() const { return history_.size(); }
  double eta() const { return eta_; }
  const std::vector<double>& q() const { return q_; }
  const std::vector<double>& lambda() const { return lambda_; }

 private:
  void recompute();

  std::size_t capacity_;
  double eta_;
  std::deque<std::vector<std::uint64_t>> history_;
  std::vector<double> q_;
  std::vector<double> lambda_;
};

}  // namespace s4t
