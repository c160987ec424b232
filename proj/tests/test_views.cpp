#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "s4t/error.hpp"
#include "s4t/views.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace s4t;
using namespace s4t::testing;

TEST(BBox, SquareImageGivesSquareCropsInRange) {
  Rng rng(41);
  std::set<std::size_t> sides;
  bool top_left = false, bottom_right = false;
  for (int i = 0; i < 10000; ++i) {
    const BBox b = sample_bbox(64, 64, rng);
    ASSERT_TRUE(bbox_admissible(b, 64, 64));
    ASSERT_EQ(b.height(), b.width());
    ASSERT_GE(b.height(), 32u);
    ASSERT_LE(b.height(), 45u);
    const double a = b.area_fraction(64, 64);
    ASSERT_GE(a, 0.25);
    ASSERT_LE(a, 0.50);
    sides.insert(b.height());
    top_left = top_left || (b.r1 == 0 && b.c1 == 0);
    bottom_right = bottom_right || (b.r2 == 64 && b.c2 == 64);
  }
  EXPECT_EQ(sides.size(), 14u);  // every side in 32..45 occurs
  EXPECT_TRUE(top_left);
  EXPECT_TRUE(bottom_right);
}

TEST(BBox, WideImageKeepsAspect) {
  Rng rng(42);
  for (int i = 0; i < 2000; ++i) {
    const BBox b = sample_bbox(32, 64, rng);
    ASSERT_EQ(b.width(), 2 * b.height());
    const double a = static_cast<double>(b.height() * b.width()) / 2048.0;
    ASSERT_GE(a, 0.25);
    ASSERT_LE(a, 0.5);
    ASSERT_LE(b.r2, 32u);
    ASSERT_LE(b.c2, 64u);
  }
}

TEST(BBox, RandomShapesAlwaysAdmissible) {
  Rng rng(43);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t H = 8 + static_cast<std::size_t>(rng.uniform_int(0, 120));
    const std::size_t W = 8 + static_cast<std::size_t>(rng.uniform_int(0, 120));
    const BBox b = sample_bbox(H, W, rng);
    ASSERT_TRUE(bbox_admissible(b, H, W)) << H << "x" << W;
    // Scale between the views is in [√2, 2].
    const double s = static_cast<double>(H) / static_cast<double>(b.height());
    ASSERT_GE(s, std::sqrt(2.0) - 1e-9);
    ASSERT_LE(s, 2.0 + 1e-9);
  }
}

TEST(BBox, AdmissibilityRejects) {
  EXPECT_FALSE(bbox_admissible({0, 0, 64, 64}, 64, 64));  // whole image
  EXPECT_FALSE(bbox_admissible({0, 0, 20, 20}, 64, 64));  // too small
  EXPECT_FALSE(bbox_admissible({40, 40, 80, 80}, 64, 64));
  EXPECT_FALSE(bbox_admissible({0, 0, 32, 44}, 64, 64));  // wrong aspect
  EXPECT_TRUE(bbox_admissible({10, 5, 42, 37}, 64, 64));
}

TEST(Resize, HandEvaluatedUpscale) {
  LabelMap m(2, 2);
  m.labels = {1, 2, 3, 4};
  const LabelMap up = resize_label_nearest(m, 4, 4);
  const std::vector<Label> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(up.labels, want);
}

TEST(Resize, TrivialCases) {
  Rng rng(44);
  LabelMap one(1, 1, 5);
  const LabelMap big = resize_label_nearest(one, 7, 3);
  for (Label l : big.labels) EXPECT_EQ(l, 5);
  const LabelMap m = random_labels(9, 5, 4, rng);
  EXPECT_EQ(resize_label_nearest(m, 9, 5), m);
  const Tensor img = random_tensor({3, 9, 5}, rng);
  EXPECT_EQ(resize_image_nearest(img, 9, 5), img);
  const Tensor flat({3, 4, 4}, 0.25f);
  EXPECT_EQ(resize_image_nearest(flat, 11, 2), Tensor({3, 11, 2}, 0.25f));
}

TEST(Resize, ImageAndLabelShareIndexMap) {
  Rng rng(45);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + static_cast<std::size_t>(rng.uniform_int(0, 20)), w = 1 + static_cast<std::size_t>(rng.uniform_int(0, 20));
    const std::size_t H = 1 + static_cast<std::size_t>(rng.uniform_int(0, 40)), W = 1 + static_cast<std::size_t>(rng.uniform_int(0, 40));
    LabelMap idx(h, w);
    Tensor img({1, h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
      idx.labels[i] = static_cast<Label>(i);
      img[i] = static_cast<float>(i);
    }
    const LabelMap a = resize_label_nearest(idx, H, W);
    const Tensor b = resize_image_nearest(img, H, W);
    for (std::size_t i = 0; i < H * W; ++i) ASSERT_EQ(static_cast<float>(a.labels[i]), b[i]);
    // Index formula: floor((i + 0.5)·in/out).
    for (std::size_t r = 0; r < H; ++r)
      ASSERT_EQ(nearest_index(r, h, H), static_cast<std::size_t>(std::floor((r + 0.5) * static_cast<double>(h) / H)));
  }
}

TEST(Crop, ExtractsBoxes) {
  Rng rng(46);
  const LabelMap m = random_labels(10, 12, 5, rng);
  const BBox b{2, 3, 7, 11};
  const LabelMap c = crop(m, b);
  ASSERT_EQ(c.height, 5u);
  ASSERT_EQ(c.width, 8u);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t q = 0; q < 8; ++q) EXPECT_EQ(c.at(r, q), m.at(r + 2, q + 3));
  const Tensor img = random_tensor({3, 10, 12}, rng);
  const Tensor ci = crop(img, b);
  EXPECT_EQ(ci.shape(), (Shape{3, 5, 8}));
  EXPECT_EQ(ci[2 * 40 + 1 * 8 + 4], img[2 * 120 + 3 * 12 + 7]);
  EXPECT_THROW(crop(m, BBox{0, 0, 11, 4}), ShapeError);
}

TEST(Views, PointwiseClassifierCommutes) {
  Rng rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = 8 + static_cast<std::size_t>(rng.uniform_int(0, 40));
    const std::size_t W = 8 + static_cast<std::size_t>(rng.uniform_int(0, 40));
    const Tensor images = random_tensor({1, 3, H, W}, rng, 0, 1);
    const BBox box = sample_bbox(H, W, rng);
    const ViewBatch v = make_views(pointwise_predict, images, std::vector<BBox>{box});
    ASSERT_EQ(v.view1[0], v.view2[0]) << "trial " << trial;
  }
}

TEST(Views, DeterministicForFixedStreams) {
  Rng seed_rng(48);
  const Tensor images = random_tensor({3, 3, 16, 16}, seed_rng, 0, 1);
  auto run = [&] {
    std::vector<Rng> rngs;
    for (std::size_t i = 0; i < 3; ++i) rngs.emplace_back(derive_seed(7, i));
    const std::vector<BBox> boxes = sample_boxes(3, 16, 16, rngs);
    return std::make_pair(boxes, make_views(pointwise_predict, images, boxes));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second.view1, b.second.view1);
  EXPECT_EQ(a.second.view2, b.second.view2);
  EXPECT_EQ(a.second.crops, b.second.crops);
}

TEST(Views, GradientFlowsOnlyThroughSecondView) {
  Rng rng(49);
  const Tensor images = random_tensor({2, 3, 12, 12}, rng, 0, 1);
  Var w = Var::parameter(random_tensor({4, 3, 1, 1}, rng));
  auto predict = [&](const Tensor& x) { return softmax_channels(conv2d(Var(x), w, Var(), 1, 0)); };
  const std::vector<BBox> boxes = {sample_bbox(12, 12, rng), sample_bbox(12, 12, rng)};
  const ViewBatch v = make_views(predict, images, boxes);
  EXPECT_TRUE(v.view2_probs.requires_grad());
  EXPECT_EQ(v.view2_probs.shape(), (Shape{2, 4, 12, 12}));
  EXPECT_EQ(v.crops.shape(), (Shape{2, 3, 12, 12}));
}
