#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "s4t/adapt.hpp"
#include "s4t/error.hpp"
#include "test_util.hpp"

using namespace s4t;
using namespace s4t::testing;

namespace {

std::vector<Tensor> random_images(std::size_t n, std::size_t H, std::size_t W, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor({3, H, W}, rng, 0, 1));
  return out;
}

Config small_config() {
  Config c;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(NoisyOracle, FlipsExactCountDeterministically) {
  Rng gen(101);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t H = 1 + static_cast<std::size_t>(gen.uniform_int(0, 20)), W = 1 + static_cast<std::size_t>(gen.uniform_int(0, 20));
    const int P = static_cast<int>(gen.uniform_int(0, 100));
    const BinaryMap r = random_mask(H, W, gen.uniform(), gen);
    BinaryMap a = r, b = r;
    Rng ra(derive_seed(5, static_cast<std::uint64_t>(trial))), rb(derive_seed(5, static_cast<std::uint64_t>(trial)));
    flip_reliability(a, P, ra);
    flip_reliability(b, P, rb);
    ASSERT_EQ(a, b);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < r.size(); ++i) changed += a.values[i] != r.values[i];
    ASSERT_EQ(changed, static_cast<std::size_t>(std::llround(P * static_cast<double>(H * W) / 100.0)));
  }
  BinaryMap m(10, 10);
  Rng rng(1);
  flip_reliability(m, 40, rng);
  EXPECT_EQ(m.count(), 40u);
  EXPECT_THROW(flip_reliability(m, 101, rng), ConfigError);
}

TEST(EpochOrder, IsASeededPermutation) {
  for (std::size_t n : {1u, 7u, 64u}) {
    std::vector<std::size_t> o = epoch_order(n, 3, 0);
    EXPECT_EQ(o, epoch_order(n, 3, 0));
    std::sort(o.begin(), o.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(o[i], i);
  }
  EXPECT_NE(epoch_order(64, 3, 0), epoch_order(64, 4, 0));
  EXPECT_NE(epoch_order(64, 3, 0), epoch_order(64, 3, 1));
}

TEST(BuildPseudolabels, PerfectOracleMarksCorrectPixels) {
  Rng rng(102);
  const SegNet model(SegNetConfig{3, {4}, 3}, 1);
  const auto images = random_images(3, 16, 16, rng);
  std::vector<LabelMap> gt;
  for (int i = 0; i < 3; ++i) gt.push_back(random_labels(16, 16, 3, rng));
  Config cfg = small_config();
  cfg.oracle = OracleMode::perfect;
  cfg.selection_mode = SelectionMode::and_vs_and;
  ClassStats stats(3, cfg.Q, cfg.eta);
  const std::vector<std::size_t> idx = {0, 1, 2};
  const PseudolabelBatch b = build_pseudolabels(model, stack_batch(images), idx, cfg, 0, stats, gt);
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_EQ(b.reliability[n].masked.count(), 0u);
    for (std::size_t i = 0; i < 256; ++i)
      ASSERT_EQ(b.reliability[n].r.values[i] != 0, b.views.view2[n].labels[i] == b.gt_view2[n].labels[i]);
  }
  cfg.oracle = OracleMode::noisy;
  cfg.oracle_p = 40;
  ClassStats s2(3, cfg.Q, cfg.eta);
  const PseudolabelBatch noisy = build_pseudolabels(model, stack_batch(images), idx, cfg, 0, s2, gt);
  for (std::size_t n = 0; n < 3; ++n) {
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < 256; ++i) flipped += noisy.reliability[n].r.values[i] != b.reliability[n].r.values[i];
    EXPECT_EQ(flipped, 102u);  // round(0.4·256)
  }
  EXPECT_THROW(build_pseudolabels(model, stack_batch(images), idx, cfg, 0, s2), Error);
}

TEST(BuildPseudolabels, StatsSeeSecondViewBeforeInterpolation) {
  Rng rng(103);
  const SegNet model(SegNetConfig{3, {4}, 4}, 2);
  const auto images = random_images(4, 16, 16, rng);
  Config cfg = small_config();
  ClassStats stats(4, cfg.Q, cfg.eta);
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const PseudolabelBatch b = build_pseudolabels(model, stack_batch(images), idx, cfg, 0, stats);
  std::vector<double> counts(4, 0.0);
  for (const LabelMap& m : b.views.view2)
    for (Label l : m.labels) counts[static_cast<std::size_t>(l)] += 1.0;
  for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(stats.q()[c], counts[c] / (4.0 * 256.0));
  EXPECT_EQ(b.views.view2, argmax_batch(b.views.view2_probs.value()));
  EXPECT_EQ(b.interp.size(), 4u);
  EXPECT_TRUE(b.gt_view2.empty());
}

TEST(Adapt, DeterministicAndBnOnly) {
  Rng rng(104);
  const SegNet source(SegNetConfig{3, {4, 4}, 3}, 3);
  const auto images = random_images(10, 16, 16, rng);
  const Config cfg = small_config();
  const AdaptResult a = adapt(source, images, cfg), b = adapt(source, images, cfg);
  ASSERT_EQ(a.steps.size(), 3u);
  EXPECT_EQ(a.model.checksum(ParamKind::bn_affine), b.model.checksum(ParamKind::bn_affine));
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(step_log_row(a.steps[s]), step_log_row(b.steps[s]));
  EXPECT_EQ(a.model.checksum(ParamKind::conv), source.checksum(ParamKind::conv));
  EXPECT_NE(a.model.checksum(ParamKind::bn_affine), source.checksum(ParamKind::bn_affine));
  for (const StepLog& s : a.steps) {
    EXPECT_NEAR(s.fraction_reliable + s.fraction_rel_nbhd + s.fraction_unrel_nbhd, 1.0, 1e-12);
    EXPECT_FALSE(s.report.has_value());
  }
  Config all = cfg;
  all.scope = UpdateScope::all_params;
  EXPECT_NE(adapt(source, images, all).model.checksum(ParamKind::conv), source.checksum(ParamKind::conv));
}

TEST(Adapt, LabelsRequiredOnlyForOracleAndAnalysis) {
  Rng rng(105);
  const SegNet source(SegNetConfig{3, {4}, 3}, 4);
  const auto images = random_images(4, 16, 16, rng);
  Config cfg = small_config();
  cfg.analysis = true;
  EXPECT_THROW(adapt(source, images, cfg), Error);
  std::vector<LabelMap> labels;
  for (int i = 0; i < 4; ++i) labels.push_back(random_labels(16, 16, 3, rng));
  const AdaptResult r = adapt(source, images, cfg, labels);
  ASSERT_TRUE(r.steps[0].report.has_value());
  EXPECT_EQ(r.steps[0].report->total, 4u * 256);
  // Labels passed without analysis are ignored.
  cfg.analysis = false;
  const AdaptResult with = adapt(source, images, cfg, labels), without = adapt(source, images, cfg);
  EXPECT_EQ(with.model.checksum(ParamKind::bn_affine), without.model.checksum(ParamKind::bn_affine));
}

TEST(Adapt, BaselinesAndAblationsRun) {
  Rng rng(106);
  const SegNet source(SegNetConfig{3, {4}, 3}, 5);
  const auto images = random_images(4, 16, 16, rng);
  for (const char* o : {"loss=entmin", "loss=ce_all", "interpolation=false", "selection_mode=and_vs_and",
                        "confidence=false", "consistency=false", "loss_weights=false", "ie_reg=false", "k=7"}) {
    Config cfg = small_config();
    cfg.set_assignment(o);
    const AdaptResult r = adapt(source, images, cfg);
    ASSERT_EQ(r.steps.size(), 1u) << o;
    EXPECT_TRUE(std::isfinite(r.steps[0].loss.total)) << o;
  }
  Config off = small_config();
  off.interpolation = false;
  EXPECT_EQ(adapt(source, images, off).steps[0].loss.interp_pixels, 0u);
}
