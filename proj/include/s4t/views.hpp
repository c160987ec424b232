#pragma once

// Aligned predictive views. All resizing is nearest-neighbour with
// half-pixel centres: output index i reads source index floor((i+0.5)·in/out).

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "s4t/autodiff.hpp"
#include "s4t/maps.hpp"
#include "s4t/rng.hpp"
#include "s4t/tensor.hpp"

namespace s4t {

// Half-open box [r1, r2) × [c1, c2).
struct BBox {
  std::size_t r1 = 0, c1 = 0, r2 = 0, c2 = 0;

  std::size_t height() const { return r2 - r1; }
  std::size_t width() const { return c2 - c1; }
  double area_fraction(std::size_t H, std::size_t W) const {
    return static_cast<double>(height() * width()) / static_cast<double>(H * W);
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

inline constexpr double kMinAreaFraction = 0.25;
inline constexpr double kMaxAreaFraction = 0.50;

// True when the box lies inside H×W, covers 25–50% of it and h·W == w·H up
// to the ±1 pixel rounding of w = round(h·W/H).
bool bbox_admissible(const BBox& box, std::size_t H, std::size_t W);

// Crop height uniform over admissible integers, width round(h·W/H),
// position uniform. Throws when no admissible box exists.
BBox sample_bbox(std::size_t H, std::size_t W, Rng& rng);

std::size_t nearest_index(std::size_t i, std::size_t in, std::size_t out);

LabelMap resize_label_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w);
// C×h×w tensor, every channel resized with the same index map.
Tensor resize_image_nearest(const Tensor& image, std::size_t out_h, std::size_t out_w);

LabelMap crop(const LabelMap& labels, const BBox& box);
Tensor crop(const Tensor& image, const BBox& box);

// For a batch of N images: view1 comes from the detached full-image
// prediction, view2_probs from the (gradient-tracked) prediction on the
// resized crops.
struct ViewBatch {
  std::vector<BBox> boxes;
  std::vector<LabelMap> view1;
  Var view2_probs;  // N×C×H×W
  std::vector<LabelMap> view2;
  Tensor crops;     // N×3×H×W resized crops that produced view2_probs
};

// images: N×3×H×W. `predict` maps an image batch to probabilities.
using Predictor = std::function<Var(const Tensor&)>;

// Samples one box per image from `rngs[n]`.
std::vector<BBox> sample_boxes(std::size_t count, std::size_t H, std::size_t W, std::span<Rng> rngs);

Tensor make_crops(const Tensor& images, std::span<const BBox> boxes);

// view1 from precomputed full-image labels (argmax of the no-grad pass).
std::vector<LabelMap> make_view1(std::span<const LabelMap> full_labels, std::span<const BBox> boxes);

ViewBatch make_views(const Predictor& predict, const Tensor& images, std::span<const BBox> boxes);

}  // namespace s4t
