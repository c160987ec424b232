#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "s4t/error.hpp"
#include "s4t/reliability.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace s4t;
using namespace s4t::testing;

namespace {

Tensor probs_with_conf(const std::vector<float>& conf, std::size_t C) {
  // One row of pixels; class 0 carries `conf`, the rest share the remainder.
  Tensor p({1, C, 1, conf.size()});
  for (std::size_t i = 0; i < conf.size(); ++i) {
    p[i] = conf[i];
    for (std::size_t c = 1; c < C; ++c) p[c * conf.size() + i] = (1.0f - conf[i]) / static_cast<float>(C - 1);
  }
  return p;
}

}  // namespace

TEST(Consistency, ConstructedCases) {
  Rng rng(31);
  const LabelMap a = random_labels(4, 6, 5, rng);
  EXPECT_EQ(consistency_map(a, a).count(), a.size());
  LabelMap b = a;
  for (Label& l : b.labels) l = (l + 1) % 5;
  EXPECT_EQ(consistency_map(a, b).count(), 0u);
  LabelMap half = b;
  for (std::size_t i = 0; i < 12; ++i) half.labels[i] = a.labels[i];
  EXPECT_DOUBLE_EQ(consistency_map(a, half).mean(), 0.5);
  EXPECT_THROW(consistency_map(a, LabelMap(3, 6)), ShapeError);
}

TEST(Thresholds, HandExample) {
  const Tensor p = probs_with_conf({0.2f, 0.4f, 0.6f, 0.8f}, 6);
  const std::vector<LabelMap> labels = {LabelMap(1, 4, 0)};
  const ClassThresholds thr = class_thresholds(p, labels, 50.0);
  EXPECT_DOUBLE_EQ(thr.t[0], 0.4f);
  EXPECT_EQ(thr.t[1], kAbsentClass);
  const BinaryMap conf = confidence_map(p, 0, labels[0], thr);
  EXPECT_EQ(conf.values, (std::vector<std::uint8_t>{0, 0, 1, 1}));
}

TEST(Thresholds, ConstantConfidenceIsNeverStrictlyAbove) {
  const Tensor p = probs_with_conf({0.7f, 0.7f, 0.7f, 0.7f, 0.7f}, 3);
  const std::vector<LabelMap> labels = {LabelMap(1, 5, 0)};
  const ClassThresholds thr = class_thresholds(p, labels, 50.0);
  EXPECT_DOUBLE_EQ(thr.t[0], 0.7f);
  EXPECT_EQ(confidence_map(p, 0, labels[0], thr).count(), 0u);
}

TEST(Thresholds, KHundredTakesMinimum) {
  const Tensor p = probs_with_conf({0.5f, 0.9f, 0.6f, 0.5f, 0.7f}, 2);
  const std::vector<LabelMap> labels = {LabelMap(1, 5, 0)};
  const ClassThresholds thr = class_thresholds(p, labels, 100.0);
  EXPECT_DOUBLE_EQ(thr.t[0], 0.5f);
  EXPECT_EQ(confidence_map(p, 0, labels[0], thr).values, (std::vector<std::uint8_t>{0, 1, 1, 0, 1}));
}

TEST(Thresholds, MatchFullSortOracle) {
  Rng rng(32);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t N = 1 + static_cast<std::size_t>(rng.uniform_int(0, 3));
    const std::size_t C = 2 + static_cast<std::size_t>(rng.uniform_int(0, 6));
    const std::size_t H = 1 + static_cast<std::size_t>(rng.uniform_int(0, 7));
    const std::size_t W = 1 + static_cast<std::size_t>(rng.uniform_int(0, 7));
    const Tensor p = random_probs(N, C, H, W, rng, rng.uniform(0.1, 5.0));
    // Labels are deliberately not the argmax: thresholds pool by given label.
    std::vector<LabelMap> labels;
    for (std::size_t n = 0; n < N; ++n) labels.push_back(random_labels(H, W, C, rng));
    const double K = trial % 4 == 0 ? std::vector<double>{1, 25, 50, 75, 99, 100}[static_cast<std::size_t>(trial / 4) % 6]
                                    : rng.uniform(0.5, 100.0);
    const ClassThresholds thr = class_thresholds(p, labels, K);
    const std::vector<double> want = thresholds_oracle(p, labels, K);
    ASSERT_EQ(thr.t.size(), want.size());
    for (std::size_t c = 0; c < C; ++c) ASSERT_EQ(thr.t[c], want[c]) << "trial " << trial << " class " << c << " K " << K;
    // Confident ⇔ strictly above the threshold of the pixel's class.
    for (std::size_t n = 0; n < N; ++n) {
      const BinaryMap conf = confidence_map(p, n, labels[n], thr);
      const std::vector<float> mx = max_channels(p, n);
      for (std::size_t i = 0; i < H * W; ++i)
        ASSERT_EQ(conf.values[i] != 0, mx[i] > want[static_cast<std::size_t>(labels[n].labels[i])]);
    }
  }
}

TEST(Thresholds, RejectsBadK) {
  const Tensor p = probs_with_conf({0.5f}, 2);
  const std::vector<LabelMap> labels = {LabelMap(1, 1, 0)};
  EXPECT_THROW(class_thresholds(p, labels, 0.0), ConfigError);
  EXPECT_THROW(class_thresholds(p, labels, 101.0), ConfigError);
}

TEST(Selection, ConstructedCases) {
  const BinaryMap ones(3, 3, 1), zeros(3, 3, 0);
  EXPECT_EQ(combine_reliability(ones, zeros, {SelectionMode::or_, true, true}).r, ones);
  EXPECT_EQ(combine_reliability(zeros, ones, {SelectionMode::and_vs_rest, true, true}).r, zeros);
  EXPECT_EQ(combine_reliability(zeros, zeros, {SelectionMode::or_, false, false}).r, ones);
}

TEST(Selection, MatchesElementwiseOracle) {
  Rng rng(33);
  const SelectionMode modes[] = {SelectionMode::or_, SelectionMode::and_vs_rest, SelectionMode::and_vs_and};
  for (int trial = 0; trial < 400; ++trial) {
    const BinaryMap a = random_mask(5, 7, rng.uniform(), rng), b = random_mask(5, 7, rng.uniform(), rng);
    const SelectionOptions opt{modes[trial % 3], rng.bernoulli(0.75), rng.bernoulli(0.75)};
    const ReliabilityMap m = combine_reliability(a, b, opt);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool cons = a.values[i], conf = b.values[i];
      const auto [r, masked] = selection_oracle(cons, conf, opt);
      ASSERT_EQ(m.r.values[i] != 0, r);
      ASSERT_EQ(m.masked.values[i] != 0, masked);
      // A pixel is never both reliable and masked.
      ASSERT_FALSE(m.r.values[i] && m.masked.values[i]);
    }
    EXPECT_EQ(m.consistent, a);
    EXPECT_EQ(m.confident, b);
  }
}

TEST(Selection, ModeNamesRoundTrip) {
  for (SelectionMode m : {SelectionMode::or_, SelectionMode::and_vs_rest, SelectionMode::and_vs_and})
    EXPECT_EQ(parse_selection_mode(to_string(m)), m);
  EXPECT_THROW(parse_selection_mode("xor"), ConfigError);
}
