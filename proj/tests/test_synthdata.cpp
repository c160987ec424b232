#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "s4t/error.hpp"
#include "s4t/synthdata.hpp"

using namespace s4t;

TEST(SynthData, SameSeedIsBitwiseIdentical) {
  const SceneSpec spec;
  for (Domain d : {Domain::source, Domain::target}) {
    const Dataset a = generate(spec, 12, 77, d, 5), b = generate(spec, 12, 77, d, 5);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
  }
  const Dataset c = generate(spec, 12, 78, Domain::source, 5);
  EXPECT_NE(c.labels, generate(spec, 12, 77, Domain::source, 5).labels);
}

TEST(SynthData, DomainShiftIsPhotometricOnly) {
  const SceneSpec spec;
  const Dataset src = generate(spec, 20, 99, Domain::source, 3);
  const Dataset tgt = generate(spec, 20, 99, Domain::target, 3);
  EXPECT_EQ(src.labels, tgt.labels);
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_NE(src.images[i], tgt.images[i]);
}

TEST(SynthData, TargetShiftWithinDeclaredRanges) {
  const SceneSpec spec;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DomainShift t = make_domain(spec, Domain::target, seed);
    for (int ch = 0; ch < 3; ++ch) {
      EXPECT_GE(t.gain[ch], 0.6);
      EXPECT_LE(t.gain[ch], 0.9);
      EXPECT_GE(t.bias[ch], 0.05);
      EXPECT_LE(t.bias[ch], 0.2);
    }
    EXPECT_EQ(t.noise, 0.08);
    const DomainShift s = make_domain(spec, Domain::source, seed);
    EXPECT_EQ(s.gain, (std::array<double, 3>{1.0, 1.0, 1.0}));
    EXPECT_EQ(s.noise, 0.02);
  }
}

TEST(SynthData, SceneInvariants) {
  const SceneSpec spec;
  const Dataset d = target_dataset(spec, 300, 1234);
  ASSERT_EQ(d.images.size(), d.labels.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::set<Label> present(d.labels[i].labels.begin(), d.labels[i].labels.end());
    ASSERT_GE(present.size(), 2u) << "image " << i;
    ASSERT_GE(*present.begin(), 0);
    ASSERT_LT(*present.rbegin(), 8);
    for (std::size_t k = 0; k < d.images[i].numel(); ++k) {
      const float v = d.images[i][k];
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
      ASSERT_EQ(v, std::round(v * 255.0f) / 255.0f);  // quantized
    }
  }
}

TEST(SynthData, ClassFrequenciesFollowPrior) {
  const SceneSpec spec;
  const Dataset d = source_dataset(spec, 500, 1234);
  std::vector<double> freq(spec.num_classes, 0.0);
  double total = 0.0;
  for (const LabelMap& m : d.labels)
    for (Label l : m.labels) {
      freq[static_cast<std::size_t>(l)] += 1.0;
      total += 1.0;
    }
  const std::vector<double> prior = spec.prior();
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const double rel = freq[c] / total / prior[c] - 1.0;
    EXPECT_LE(std::abs(rel), 0.20) << "class " << c << " freq " << freq[c] / total << " prior " << prior[c];
  }
}

TEST(SynthData, RejectsDegenerateSpecs) {
  SceneSpec spec;
  EXPECT_THROW(generate(spec, 0, 1, Domain::source, 1), Error);
  spec.num_stuff = 0;
  EXPECT_THROW(generate(spec, 1, 1, Domain::source, 1), ConfigError);
  spec = SceneSpec{};
  spec.palette.pop_back();
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = SceneSpec{};
  spec.prior_ratio = 0.0;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(SynthData, WriteReadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "s4t_test_synth_rt";
  std::filesystem::remove_all(dir);
  const Dataset d = target_dataset(SceneSpec{}, 6, 8);
  const auto manifest = write_dataset(dir, d, 8);
  const Dataset back = read_dataset(manifest, 8, true);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  const Dataset no_labels = read_dataset(manifest, 8, false);
  EXPECT_EQ(no_labels.images, d.images);
  EXPECT_TRUE(no_labels.labels.empty());
  std::filesystem::remove_all(dir);
}
