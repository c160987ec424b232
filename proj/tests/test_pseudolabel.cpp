#include <gtest/gtest.h>

#include <cmath>

#include "s4t/error.hpp"
#include "s4t/pseudolabel.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace s4t;
using namespace s4t::testing;

TEST(Interpolation, MatchesWindowOracle) {
  Rng rng(21);
  for (std::size_t k : {3u, 5u}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t C = 2 + static_cast<std::size_t>(rng.uniform_int(0, 6));
      const Tensor probs = random_probs(2, C, 16, 16, rng);
      const BinaryMap r = random_mask(16, 16, rng.uniform(), rng);
      const std::size_t n = trial % 2;
      const InterpolationResult got = interpolate(r, probs, n, k);
      const InterpolationResult want = interpolate_oracle(r, probs, n, k);
      ASSERT_EQ(got.count, want.count);
      ASSERT_EQ(got.w_int, want.w_int);
      ASSERT_EQ(got.y_int, want.y_int);
    }
  }
}

TEST(Interpolation, InvariantsOnRandomInputs) {
  Rng rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t H = 1 + static_cast<std::size_t>(rng.uniform_int(0, 12));
    const std::size_t W = 1 + static_cast<std::size_t>(rng.uniform_int(0, 12));
    const std::size_t k = 3 + 2 * static_cast<std::size_t>(rng.uniform_int(0, 3));
    const Tensor probs = random_probs(1, 4, H, W, rng);
    const BinaryMap r = random_mask(H, W, rng.uniform(), rng);
    const InterpolationResult ip = interpolate(r, probs, 0, k);
    for (std::size_t i = 0; i < H * W; ++i) {
      ASSERT_GE(ip.w_int[i], 0.0f);
      ASSERT_LE(ip.w_int[i], 1.0f);
      ASSERT_EQ(ip.w_int[i], static_cast<float>(ip.count[i]) / static_cast<float>(k * k - 1));
      // w_int is zero exactly where no reliable neighbour exists.
      ASSERT_EQ(ip.w_int[i] == 0.0f, ip.y_int.labels[i] == kNoLabel);
      if (r.values[i]) {
        ASSERT_EQ(ip.count[i], 0);
      }
    }
  }
}

TEST(Interpolation, FullyReliableNeighbourhood) {
  const std::size_t C = 3;
  Tensor probs({1, C, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    probs[0 * 9 + i] = 0.2f;
    probs[1 * 9 + i] = 0.1f;
    probs[2 * 9 + i] = 0.7f;
  }
  BinaryMap r(3, 3, 1);
  r.at(1, 1) = 0;
  const InterpolationResult ip = interpolate(r, probs, 0, 3);
  EXPECT_EQ(ip.y_int.at(1, 1), 2);
  EXPECT_EQ(ip.w_int[4], 1.0f);
  EXPECT_EQ(ip.count[4], 8);
}

TEST(Interpolation, IsolatedPixelHasNoLabel) {
  Rng rng(23);
  const Tensor probs = random_probs(1, 3, 5, 5, rng);
  BinaryMap r(5, 5, 0);
  r.at(4, 4) = 1;
  const InterpolationResult ip = interpolate(r, probs, 0, 3);
  EXPECT_EQ(ip.w_int[0], 0.0f);
  EXPECT_EQ(ip.y_int.labels[0], kNoLabel);
  EXPECT_EQ(ip.count[3 * 5 + 3], 1);
}

TEST(Interpolation, TiesPreferLowestClass) {
  Tensor probs({1, 2, 1, 3}, 0.5f);
  BinaryMap r(1, 3, 1);
  r.at(0, 1) = 0;
  EXPECT_EQ(interpolate(r, probs, 0, 3).y_int.at(0, 1), 0);
}

TEST(Interpolation, RejectsBadWindow) {
  const Tensor probs({1, 2, 4, 4}, 0.5f);
  const BinaryMap r(4, 4);
  EXPECT_THROW(interpolate(r, probs, 0, 4), ConfigError);
  EXPECT_THROW(interpolate(r, probs, 0, 1), ConfigError);
  EXPECT_THROW(interpolate(BinaryMap(3, 4), probs, 0, 3), ShapeError);
}

TEST(ClassStats, UniformLabelsGiveEqualWeights) {
  const std::size_t C = 4;
  ClassStats s(C, 100, 0.5);
  LabelMap m(4, 4);
  for (std::size_t i = 0; i < 16; ++i) m.labels[i] = static_cast<Label>(i % C);
  s.update(std::vector<LabelMap>{m});
  for (std::size_t c = 0; c < C; ++c) {
    EXPECT_DOUBLE_EQ(s.q()[c], 0.25);
    EXPECT_NEAR(s.lambda()[c], 0.5 * std::log(4.0), 1e-12);
  }
}

TEST(ClassStats, HandEvaluatedWeights) {
  ClassStats s(2, 100, 0.5);
  s.update_counts({90, 10});
  EXPECT_DOUBLE_EQ(s.q()[0], 0.9);
  EXPECT_DOUBLE_EQ(s.q()[1], 0.1);
  EXPECT_NEAR(s.lambda()[0], 0.0527, 1e-4);
  EXPECT_NEAR(s.lambda()[1], 1.1513, 1e-4);
}

TEST(ClassStats, RingBufferForgetsOldBatches) {
  ClassStats s(2, 2, 0.5);
  s.update_counts({1000, 0});
  s.update_counts({1, 1});
  s.update_counts({3, 1});
  EXPECT_EQ(s.history_size(), 2u);
  EXPECT_DOUBLE_EQ(s.q()[0], 4.0 / 6.0);
}

TEST(ClassStats, FloorBoundsWeights) {
  ClassStats s(3, 10, 0.5);
  s.update_counts({5, 5, 0});
  EXPECT_DOUBLE_EQ(s.lambda()[2], -0.5 * std::log(1e-6));
}

TEST(ClassStats, PropertiesOnRandomHistories) {
  Rng rng(24);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t C = 2 + static_cast<std::size_t>(rng.uniform_int(0, 8));
    const double eta = rng.uniform(0.0, 0.99);
    ClassStats s(C, 1 + static_cast<std::size_t>(rng.uniform_int(0, 5)), eta);
    const int updates = 1 + static_cast<int>(rng.uniform_int(0, 8));
    for (int u = 0; u < updates; ++u) {
      std::vector<std::uint64_t> counts(C);
      counts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(C) - 1))] = 1;  // history never empty
      for (auto& v : counts) v += static_cast<std::uint64_t>(rng.uniform_int(0, 50));
      s.update_counts(counts);
    }
    double sum = 0.0;
    for (double v : s.q()) sum += v;
    ASSERT_NEAR(sum, 1.0, 1e-6);
    for (std::size_t a = 0; a < C; ++a) {
      ASSERT_GE(s.lambda()[a], 0.0);
      ASSERT_NEAR(s.lambda()[a], std::log(1.0 / std::pow(std::max(s.q()[a], 1e-6), eta)), 1e-9);
      // λ is non-increasing in q.
      for (std::size_t b = 0; b < C; ++b)
        if (s.q()[a] < s.q()[b]) {
          ASSERT_GE(s.lambda()[a], s.lambda()[b]);
        }
    }
  }
}

TEST(ClassStats, RejectsBadInput) {
  EXPECT_THROW(ClassStats(1, 10, 0.5), ConfigError);
  EXPECT_THROW(ClassStats(3, 0, 0.5), ConfigError);
  ClassStats s(3, 10, 0.5);
  EXPECT_THROW(s.update_counts({1, 2}), ShapeError);
  LabelMap bad(1, 1, 7);
  EXPECT_THROW(s.update(std::vector<LabelMap>{bad}), Error);
}
