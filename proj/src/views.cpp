#include "s4t/views.hpp"

#include <cmath>
#include <string>

#include "s4t/error.hpp"

namespace s4t {

namespace {

// Admissible crop heights: 0.25·H·W ≤ h·w ≤ 0.5·H·W with w = round(h·W/H).
std::size_t width_for(std::size_t h, std::size_t H, std::size_t W) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(h) * static_cast<double>(W) / static_cast<double>(H)));
}

bool area_ok(std::size_t h, std::size_t w, std::size_t H, std::size_t W) {
  const std::size_t a = h * w, total = H * W;
  return 4 * a >= total && 2 * a <= total;
}

}  // namespace

bool bbox_admissible(const BBox& box, std::size_t H, std::size_t W) {
  if (!(box.r1 < box.r2 && box.r2 <= H && box.c1 < box.c2 && box.c2 <= W)) return false;
  return area_ok(box.height(), box.width(), H, W) && box.width() == width_for(box.height(), H, W);
}

BBox sample_bbox(std::size_t H, std::size_t W, Rng& rng) {
  if (H < 8 || W < 8) throw Error("sample_bbox: image must be at least 8×8, got " + std::to_string(H) + "×" + std::to_string(W));
  const auto lo = static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(H)));
  const auto hi = static_cast<std::size_t>(std::floor(std::sqrt(0.5) * static_cast<double>(H)));
  for (int attempt = 0; attempt < 100 && lo <= hi; ++attempt) {
    const auto h = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    const std::size_t w = width_for(h, H, W);
    if (w == 0 || w > W || !area_ok(h, w, H, W)) continue;
    const auto r1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(H - h)));
    const auto c1 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(W - w)));
    return {r1, c1, r1 + h, c1 + w};
  }
  throw Error("sample_bbox: no admissible box for a " + std::to_string(H) + "×" + std::to_string(W) + " image");
}

std::size_t nearest_index(std::size_t i, std::size_t in, std::size_t out) {
  // floor((i + 0.5)·in/out) in exact integer arithmetic.
  return ((2 * i + 1) * in) / (2 * out);
}

LabelMap resize_label_nearest(const LabelMap& labels, std::size_t out_h, std::size_t out_w) {
  if (labels.height == 0 || labels.width == 0) throw ShapeError("resize_label_nearest: empty input");
  LabelMap out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const std::size_t sr = nearest_index(r, labels.height, out_h);
    for (std::size_t c = 0; c < out_w; ++c) out.at(r, c) = labels.at(sr, nearest_index(c, labels.width, out_w));
  }
  return out;
}

Tensor resize_image_nearest(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3 || image.dim(1) == 0 || image.dim(2) == 0) {
    throw ShapeError("resize_image_nearest: expected non-empty C×H×W, got " + shape_str(image.shape()));
  }
  const std::size_t C = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<std::size_t> cols(out_w);
  for (std::size_t c = 0; c < out_w; ++c) cols[c] = nearest_index(c, w, out_w);
  Tensor out({C, out_h, out_w});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t r = 0; r < out_h; ++r) {
      const float* src = image.ptr() + (ch * h + nearest_index(r, h, out_h)) * w;
      float* dst = out.ptr() + (ch * out_h + r) * out_w;
      for (std::size_t c = 0; c < out_w; ++c) dst[c] = src[cols[c]];
    }
  return out;
}

LabelMap crop(const LabelMap& labels, const BBox& box) {
  if (box.r2 > labels.height || box.c2 > labels.width || box.r1 >= box.r2 || box.c1 >= box.c2) {
    throw ShapeError("crop: box outside label map");
  }
  LabelMap out(box.height(), box.width());
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) out.at(r, c) = labels.at(box.r1 + r, box.c1 + c);
  return out;
}

Tensor crop(const Tensor& image, const BBox& box) {
  if (image.rank() != 3 || box.r2 > image.dim(1) || box.c2 > image.dim(2) || box.r1 >= box.r2 || box.c1 >= box.c2) {
    throw ShapeError("crop: box outside image");
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2), h = box.height(), w = box.width();
  Tensor out({C, h, w});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) out[(ch * h + r) * w + c] = image[(ch * H + box.r1 + r) * W + box.c1 + c];
  return out;
}

std::vector<BBox> sample_boxes(std::size_t count, std::size_t H, std::size_t W, std::span<Rng> rngs) {
  if (rngs.size() < count) throw Error("sample_boxes: one generator per image required");
  std::vector<BBox> boxes;
  for (std::size_t n = 0; n < count; ++n) boxes.push_back(sample_bbox(H, W, rngs[n]));
  return boxes;
}

Tensor make_crops(const Tensor& images, std::span<const BBox> boxes) {
  if (images.rank() != 4 || images.dim(0) != boxes.size()) throw ShapeError("make_crops: one box per image required");
  const std::size_t H = images.dim(2), W = images.dim(3);
  std::vector<Tensor> crops;
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    const Tensor one = slice_batch(images, n, 1);
    crops.push_back(resize_image_nearest(crop(one.reshaped({images.dim(1), H, W}), boxes[n]), H, W));
  }
  return stack_batch(crops);
}

std::vector<LabelMap> make_view1(std::span<const LabelMap> full_labels, std::span<const BBox> boxes) {
  if (full_labels.size() != boxes.size()) throw ShapeError("make_view1: one box per label map required");
  std::vector<LabelMap> out;
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    out.push_back(resize_label_nearest(crop(full_labels[n], boxes[n]), full_labels[n].height, full_labels[n].width));
  }
  return out;
}

ViewBatch make_views(const Predictor& predict, const Tensor& images, std::span<const BBox> boxes) {
  ViewBatch v;
  v.boxes.assign(boxes.begin(), boxes.end());
  {
    NoGradGuard no_grad;
    const Var full = predict(images);
    const std::vector<LabelMap> labels = argmax_batch(full.value());
    v.view1 = make_view1(labels, boxes);
  }
  v.crops = make_crops(images, boxes);
  v.view2_probs = predict(v.crops);
  v.view2 = argmax_batch(v.view2_probs.value());
  return v;
}

}  // namespace s4t
