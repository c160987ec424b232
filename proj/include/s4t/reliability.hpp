#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "s4t/maps.hpp"
#include "s4t/tensor.hpp"

namespace s4t {

enum class SelectionMode { or_, and_vs_rest, and_vs_and };
const char* to_string(SelectionMode mode);
SelectionMode parse_selection_mode(const std::string& text);

struct ReliabilityMap {
  BinaryMap r;
  BinaryMap consistent;
  BinaryMap confident;
  BinaryMap masked;  // excluded from every loss term (and_vs_and only)
};

inline constexpr double kAbsentClass = std::numeric_limits<double>::infinity();

struct ClassThresholds {
  std::vector<double> t;  // +inf for classes without pixels in the batch
  double K = 50.0;
};

BinaryMap consistency_map(const LabelMap& view1, const LabelMap& view2);

// Per class c, the nearest-rank value at rank ceil((1 − K/100)·n) (1-based,
// minimum 1) of the ascending max-probabilities of the n pixels labeled c,
// pooled over the batch. probs: N×C×H×W, labels[n] its argmax maps.
ClassThresholds class_thresholds(const Tensor& probs, std::span<const LabelMap> labels, double K);

// max_c p > t_{label}, strictly.
BinaryMap confidence_map(const Tensor& probs, std::size_t n, const LabelMap& labels, const ClassThresholds& thr);

struct SelectionOptions {
  SelectionMode mode = SelectionMode::or_;
  bool use_confidence = true;
  bool use_consistency = true;
};

// Combines the two cues. With one cue disabled r is the other cue; with both
// disabled every pixel is reliable.
ReliabilityMap combine_reliability(BinaryMap consistent, BinaryMap confident, const SelectionOptions& options);

ReliabilityMap make_reliability(const LabelMap& view1, const LabelMap& view2, const Tensor& probs2, std::size_t n,
                                const ClassThresholds& thr, const SelectionOptions& options);

}  // namespace s4t
