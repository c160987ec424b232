#include <gtest/gtest.h>

#include <cmath>

#include "s4t/error.hpp"
#include "s4t/io.hpp"
#include "s4t/segmodel.hpp"
#include "test_util.hpp"

using namespace s4t;
using namespace s4t::testing;

namespace {

Var sum_log_prob(const SegNet& model, const Tensor& images) {
  return sum(log_eps(model.forward(images), 1e-8));
}

}  // namespace

TEST(SegNet, ShapesAndParameterInventory) {
  Rng rng(81);
  const SegNet model(SegNetConfig{}, 1);
  const Tensor x = random_tensor({2, 3, 10, 14}, rng, 0, 1);
  const Var p = model.forward(x);
  EXPECT_EQ(p.shape(), (Shape{2, 8, 10, 14}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 140; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 8; ++c) s += p.value()[(n * 8 + c) * 140 + i];
      ASSERT_NEAR(s, 1.0, 1e-5);
    }
  std::size_t bn = 0, conv = 0;
  for (const Parameter& q : model.parameters()) (q.kind == ParamKind::bn_affine ? bn : conv)++;
  EXPECT_EQ(bn, 6u);    // γ, β for three blocks
  EXPECT_EQ(conv, 8u);  // weight, bias for three blocks + head
}

TEST(SegNet, DuplicatedBatchGivesDuplicatedOutputs) {
  Rng rng(82);
  const SegNet model(SegNetConfig{}, 2);
  const Tensor one = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  const Tensor two = stack_batch(std::vector<Tensor>{one.reshaped({3, 8, 8}), one.reshaped({3, 8, 8})});
  const Tensor out = model.forward(two).value();
  EXPECT_EQ(slice_batch(out, 0, 1), slice_batch(out, 1, 1));
  // Batch statistics: a single image normalizes with its own statistics.
  EXPECT_EQ(model.forward(one).value(), slice_batch(out, 0, 1));
}

TEST(SegNet, SameSeedSameWeights) {
  const SegNet a(SegNetConfig{}, 9), b(SegNetConfig{}, 9), c(SegNetConfig{}, 10);
  EXPECT_EQ(a.checksum(ParamKind::conv), b.checksum(ParamKind::conv));
  EXPECT_NE(a.checksum(ParamKind::conv), c.checksum(ParamKind::conv));
  EXPECT_EQ(a.checksum(ParamKind::bn_affine), c.checksum(ParamKind::bn_affine));  // γ=1, β=0
}

TEST(Adam, HandEvaluatedFirstSteps) {
  std::vector<Parameter> params = {{"p", ParamKind::bn_affine, Var::parameter(Tensor({2}, 0.5f))}};
  Adam adam(params, AdamConfig{.lr = 0.1});
  // Loss = Σ θ, so g = 1 everywhere; bias-corrected m̂ = v̂ = 1.
  for (int step = 1; step <= 3; ++step) {
    backward(sum(params[0].var));
    adam.step(params, UpdateScope::bn_only);
    EXPECT_NEAR(params[0].var.value()[0], 0.5 - 0.1 * step, 1e-6);
  }
  EXPECT_EQ(adam.steps(), 3);
  EXPECT_FALSE(params[0].var.has_grad());
  EXPECT_EQ(adam.first_moments()[0].shape(), params[0].var.shape());
  EXPECT_EQ(adam.second_moments()[0].shape(), params[0].var.shape());
}

TEST(Adam, ZeroGradientOnlyDecays) {
  std::vector<Parameter> params = {{"a", ParamKind::bn_affine, Var::parameter(Tensor({3}, 2.0f))},
                                   {"b", ParamKind::bn_affine, Var::parameter(Tensor({1}, 1.0f))}};
  Adam adam(params, AdamConfig{.lr = 0.01, .weight_decay = 0.5});
  backward(sum(params[1].var));  // "a" gets no gradient
  adam.step(params, UpdateScope::bn_only);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(params[0].var.value()[i], 2.0f * (1.0f - 0.005f));
  EXPECT_NEAR(params[1].var.value()[0], 1.0 - 0.01 - 0.005, 1e-6);
}

TEST(Adam, RequiresGradientInScope) {
  std::vector<Parameter> params = {{"w", ParamKind::conv, Var::parameter(Tensor({1}, 1.0f))}};
  Adam adam(params, AdamConfig{});
  EXPECT_THROW(adam.step(params, UpdateScope::bn_only), Error);
  backward(sum(params[0].var));
  EXPECT_THROW(adam.step(params, UpdateScope::bn_only), Error);
  EXPECT_NO_THROW(adam.step(params, UpdateScope::all_params));
}

TEST(SegNet, BnOnlyStepsLeaveConvUntouched) {
  Rng rng(83);
  SegNet model(SegNetConfig{}, 3);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  const std::uint64_t conv0 = model.checksum(ParamKind::conv), bn0 = model.checksum(ParamKind::bn_affine);
  model.set_trainable(UpdateScope::bn_only);
  for (const Parameter& p : model.parameters()) EXPECT_EQ(p.var.requires_grad(), p.kind == ParamKind::bn_affine);
  Adam adam(model.parameters(), AdamConfig{.lr = 1e-2, .weight_decay = 5e-4});
  for (int step = 0; step < 10; ++step) {
    backward(sum_log_prob(model, x));
    adam.step(model.parameters(), UpdateScope::bn_only);
  }
  EXPECT_EQ(model.checksum(ParamKind::conv), conv0);
  EXPECT_NE(model.checksum(ParamKind::bn_affine), bn0);

  model.set_trainable(UpdateScope::all_params);
  Adam all(model.parameters(), AdamConfig{.lr = 1e-2});
  backward(sum_log_prob(model, x));
  all.step(model.parameters(), UpdateScope::all_params);
  EXPECT_NE(model.checksum(ParamKind::conv), conv0);
}

TEST(SegNet, CheckpointRoundTripIsBitwise) {
  Rng rng(84);
  SegNet model(SegNetConfig{3, {4, 6}, 5}, 4);
  model.parameters()[2].var.mutable_value()[0] = 1.75f;  // non-default γ
  const auto path = std::filesystem::temp_directory_path() / "s4t_test_ckpt.s4tt";
  model.save(path);
  const SegNet back = SegNet::load(path);
  EXPECT_EQ(back.config().widths, (std::vector<std::size_t>{4, 6}));
  EXPECT_EQ(back.num_classes(), 5u);
  const Tensor x = random_tensor({2, 3, 9, 7}, rng, 0, 1);
  EXPECT_EQ(back.forward(x).value(), model.forward(x).value());
  EXPECT_EQ(back.checksum(ParamKind::conv), model.checksum(ParamKind::conv));
  EXPECT_EQ(back.checksum(ParamKind::bn_affine), model.checksum(ParamKind::bn_affine));

  // Wrong entries are rejected.
  save_named_tensors(path, std::vector<NamedTensor>{{"head.weight", Tensor({5, 4, 1, 1})}});
  EXPECT_THROW(SegNet::load(path), FormatError);
  std::filesystem::remove(path);
}

TEST(SegNet, CloneIsIndependent) {
  SegNet a(SegNetConfig{}, 5);
  SegNet b = a.clone();
  b.parameters()[0].var.mutable_value()[0] += 1.0f;
  EXPECT_NE(a.checksum(ParamKind::conv), b.checksum(ParamKind::conv));
}

TEST(SourceTraining, LearnsConstantLabelAndIsDeterministic) {
  Rng rng(85);
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;
  for (int i = 0; i < 6; ++i) {
    images.push_back(random_tensor({3, 8, 8}, rng, 0, 1));
    labels.push_back(LabelMap(8, 8, 2));
  }
  const SegNetConfig cfg{3, {4, 4}, 3};
  SourceTrainingOptions opt{.epochs = 15, .lr = 5e-2, .batch_size = 3, .seed = 11};
  SegNet a(cfg, 1), b(cfg, 1);
  std::size_t steps = 0;
  const SourceTrainingReport ra = train_source(a, images, labels, opt, [&](int, std::size_t, double) { ++steps; });
  const SourceTrainingReport rb = train_source(b, images, labels, opt);
  EXPECT_EQ(steps, 30u);
  EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
  EXPECT_EQ(a.checksum(ParamKind::conv), b.checksum(ParamKind::conv));
  EXPECT_LT(ra.epoch_loss.back(), ra.epoch_loss.front());
  EXPECT_EQ(ra.pixel_accuracy, 1.0);
  EXPECT_THROW(train_source(a, {}, {}, opt), Error);
}

TEST(SegModel, FlipAndScopeHelpers) {
  Rng rng(86);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng);
  EXPECT_EQ(flip_horizontal(flip_horizontal(x)), x);
  EXPECT_EQ(flip_horizontal(x)[4], x[0]);
  const LabelMap m = random_labels(3, 4, 5, rng);
  EXPECT_EQ(flip_horizontal(m).at(1, 0), m.at(1, 3));
  EXPECT_EQ(parse_scope(to_string(UpdateScope::bn_only)), UpdateScope::bn_only);
  EXPECT_EQ(parse_scope(to_string(UpdateScope::all_params)), UpdateScope::all_params);
  EXPECT_THROW(parse_scope("head_only"), ConfigError);
  EXPECT_TRUE(in_scope(ParamKind::bn_affine, UpdateScope::bn_only));
  EXPECT_FALSE(in_scope(ParamKind::conv, UpdateScope::bn_only));
  EXPECT_TRUE(in_scope(ParamKind::conv, UpdateScope::all_params));
}

TEST(CrossEntropy, MatchesDefinition) {
  Rng rng(87);
  const Tensor p = random_probs(2, 4, 3, 3, rng);
  const std::vector<LabelMap> y = {random_labels(3, 3, 4, rng), random_labels(3, 3, 4, rng)};
  double want = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i)
      want -= std::log(static_cast<double>(p[(n * 4 + static_cast<std::size_t>(y[n].labels[i])) * 9 + i]) + 1e-8);
  // Logs are taken in float.
  EXPECT_NEAR(cross_entropy(Var(p), y).item(), want / 18.0, 1e-6);
}
