#include "s4t/reliability.hpp"

#include <algorithm>
#include <cmath>

#include "s4t/error.hpp"

namespace s4t {

const char* to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::or_: return "or";
    case SelectionMode::and_vs_rest: return "and_vs_rest";
    case SelectionMode::and_vs_and: return "and_vs_and";
  }
  return "?";
}

SelectionMode parse_selection_mode(const std::string& text) {
  if (text == "or") return SelectionMode::or_;
  if (text == "and_vs_rest") return SelectionMode::and_vs_rest;
  if (text == "and_vs_and") return SelectionMode::and_vs_and;
  throw ConfigError("unknown selection mode '" + text + "' (expected or, and_vs_rest or and_vs_and)");
}

namespace {

void check_same(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.height != b.height || a.width != b.width) throw ShapeError(std::string(what) + ": label maps differ in shape");
}

void check_probs(const Tensor& probs, std::size_t n, const LabelMap& labels) {
  if (probs.rank() != 4 || n >= probs.dim(0) || probs.dim(2) != labels.height || probs.dim(3) != labels.width) {
    throw ShapeError("probabilities " + shape_str(probs.shape()) + " do not match a " + std::to_string(labels.height) +
                     "×" + std::to_string(labels.width) + " label map");
  }
}

}  // namespace

BinaryMap consistency_map(const LabelMap& view1, const LabelMap& view2) {
  check_same(view1, view2, "consistency_map");
  BinaryMap out(view1.height, view1.width);
  for (std::size_t i = 0; i < view1.size(); ++i) out.values[i] = view1.labels[i] == view2.labels[i];
  return out;
}

ClassThresholds class_thresholds(const Tensor& probs, std::span<const LabelMap> labels, double K) {
  if (!(K > 0.0 && K <= 100.0)) throw ConfigError("K must be in (0, 100]");
  if (probs.rank() != 4 || labels.size() != probs.dim(0)) throw ShapeError("class_thresholds: batch size mismatch");
  const std::size_t C = probs.dim(1);
  std::vector<std::vector<float>> per_class(C);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    check_probs(probs, n, labels[n]);
    const std::vector<float> conf = max_channels(probs, n);
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const Label y = labels[n].labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= C) throw Error("class_thresholds: label out of range");
      per_class[static_cast<std::size_t>(y)].push_back(conf[i]);
    }
  }
  ClassThresholds thr{std::vector<double>(C, kAbsentClass), K};
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<float>& v = per_class[c];
    if (v.empty()) continue;
    // (100 − K)·n is exact for integral K, so the division is the only rounding.
    const double exact = (100.0 - K) * static_cast<double>(v.size()) / 100.0;
    auto rank = static_cast<std::size_t>(std::ceil(exact));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
    thr.t[c] = v[rank - 1];
  }
  return thr;
}

BinaryMap confidence_map(const Tensor& probs, std::size_t n, const LabelMap& labels, const ClassThresholds& thr) {
  check_probs(probs, n, labels);
  if (thr.t.size() != probs.dim(1)) throw ShapeError("confidence_map: threshold count differs from class count");
  const std::vector<float> conf = max_channels(probs, n);
  BinaryMap out(labels.height, labels.width);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    out.values[i] = static_cast<double>(conf[i]) > thr.t[static_cast<std::size_t>(labels.labels[i])];
  }
  return out;
}

ReliabilityMap combine_reliability(BinaryMap consistent, BinaryMap confident, const SelectionOptions& options) {
  if (consistent.height != confident.height || consistent.width != confident.width) {
    throw ShapeError("combine_reliability: maps differ in shape");
  }
  ReliabilityMap m;
  m.r = BinaryMap(consistent.height, consistent.width);
  m.masked = BinaryMap(consistent.height, consistent.width);
  for (std::size_t i = 0; i < m.r.size(); ++i) {
    const bool a = consistent.values[i], b = confident.values[i];
    if (!options.use_confidence && !options.use_consistency) {
      m.r.values[i] = 1;
    } else if (!options.use_confidence) {
      m.r.values[i] = a;
    } else if (!options.use_consistency) {
      m.r.values[i] = b;
    } else {
      switch (options.mode) {
        case SelectionMode::or_: m.r.values[i] = a || b; break;
        case SelectionMode::and_vs_rest: m.r.values[i] = a && b; break;
        case SelectionMode::and_vs_and:
          m.r.values[i] = a && b;
          m.masked.values[i] = a != b;
          break;
      }
    }
  }
  m.consistent = std::move(consistent);
  m.confident = std::move(confident);
  return m;
}

ReliabilityMap make_reliability(const LabelMap& view1, const LabelMap& view2, const Tensor& probs2, std::size_t n,
                                const ClassThresholds& thr, const SelectionOptions& options) {
  return combine_reliability(consistency_map(view1, view2), confidence_map(probs2, n, view2, thr), options);
}

}  // namespace s4t
