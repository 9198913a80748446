#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "gtta/model.hpp"
#include "gtta/self_training.hpp"
#include "helpers.hpp"

using namespace gtta;

namespace {

ArchConfig tiny_arch(int classes = 4) {
  ArchConfig a;
  a.class_count = classes;
  a.widths = {8, 8};
  return a;
}

}  // namespace

TEST(Adam, ThreeStepTrajectory) {
  nn::Param<double> p("theta", 1, 1);
  p.value(0, 0) = 1.0;
  Adam<double> adam;
  const std::vector<nn::Param<double>*> params{&p};
  const double grads[3] = {0.5, -0.2, 0.1};
  const double expected[3] = {0.900000002, 0.8654394181165108, 0.8275002408356956};
  for (int t = 0; t < 3; ++t) {
    p.grad(0, 0) = grads[t];
    adam.step(params, 0.1);
    EXPECT_NEAR(p.value(0, 0), expected[t], 1e-12) << "step " << t + 1;
  }
  EXPECT_EQ(adam.steps(), 3);
}

TEST(Adam, ZeroGradientAndZeroRateLeaveParametersAlone) {
  nn::Param<double> p("w", 2, 3);
  p.value.setConstant(0.7);
  Adam<double> a;
  a.step({&p}, 0.1);
  EXPECT_TRUE((p.value.array() == 0.7).all());
  p.grad.setConstant(1.0);
  Adam<double> b;
  b.step({&p}, 0.0);
  EXPECT_TRUE((p.value.array() == 0.7).all());
}

TEST(Adam, NonFiniteGradientRejectsWholeStep) {
  nn::Param<double> p("a", 1, 2), q("b", 1, 1);
  p.grad << 1.0, 1.0;
  q.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Adam<double> adam;
  EXPECT_THROW(adam.step({&p, &q}, 0.1), NonFiniteGradientError);
  EXPECT_EQ(p.value, Matrix<double>::Zero(1, 2));
  EXPECT_EQ(adam.steps(), 0);
  nn::Param<double> r("c", 1, 1);
  r.grad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam.step({&r}, 0.1), NonFiniteGradientError);
}

TEST(Classifier, SoftmaxRowsSumToOneAndShapeIsChecked) {
  ClassifierF model(tiny_arch(5), 1);
  auto gen = gtta::testing::rng(61);
  const auto p = model.predict_proba(gtta::testing::random_tensor(gen, Shape{7, 3, 16, 16}));
  ASSERT_EQ(p.rows(), 7);
  ASSERT_EQ(p.cols(), 5);
  for (Index i = 0; i < 7; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0f, 1e-5f);
  EXPECT_THROW(model.forward(ImageBatch(Shape{2, 3, 8, 8})), ParameterError);
  EXPECT_THROW(model.forward(ImageBatch(Shape{2, 1, 16, 16})), ParameterError);
  EXPECT_THROW(model.forward(ImageBatch(Shape{0, 3, 16, 16})), ParameterError);
  ArchConfig bad = tiny_arch();
  bad.widths = {4, 4, 4, 4, 4};
  EXPECT_THROW(ClassifierF(bad, 0), ParameterError);
}

TEST(Classifier, DuplicatedSampleUnderEvalAndBatchStatistics) {
  ClassifierF model(tiny_arch(), 2);
  auto gen = gtta::testing::rng(62);
  const auto x = gtta::testing::random_tensor(gen, Shape{1, 3, 16, 16});
  const auto other = gtta::testing::random_tensor(gen, Shape{1, 3, 16, 16});
  const auto pair = ImageBatch::concat(x, x);
  const auto mixed = ImageBatch::concat(x, other);
  model.set_bn_mode({BnMode::eval_stats, 0.0});
  const Matrix<float> a = model.forward(pair), b = model.forward(mixed);
  EXPECT_EQ(a.row(0), a.row(1));
  EXPECT_EQ(a.row(0), b.row(0));
  model.set_bn_mode({BnMode::train_stats, 1.0});
  const Matrix<float> c = model.forward(pair), d = model.forward(mixed);
  EXPECT_EQ(c.row(0), c.row(1));
  EXPECT_FALSE(c.row(0).isApprox(d.row(0), 1e-4f));
}

namespace {

double source_loss(Classifier<double>& model, const Tensor<double>& x, const std::vector<int>& y) {
  const auto p = model.predict_proba(x, {.source_training = false, .commit_ema = false});
  return ce_loss_source<double>(y, p).value;
}

}  // namespace

TEST(Classifier, CrossEntropyGradientsMatchFiniteDifferences) {
  ArchConfig arch;
  arch.class_count = 3;
  arch.side = 8;
  arch.widths = {4};
  auto gen = gtta::testing::rng(63);
  const auto x = gtta::testing::random_tensor<double>(gen, Shape{5, 3, 8, 8});
  const std::vector<int> y{0, 2, 1, 1, 0};
  for (const BnModeConfig mode : {BnModeConfig{BnMode::train_stats, 1.0}, BnModeConfig{BnMode::interpolated, 0.1},
                                  BnModeConfig{BnMode::eval_stats, 0.0}}) {
    Classifier<double> model(arch, 4);
    model.set_bn_mode(mode);
    model.zero_grad();
    const auto p = model.predict_proba(x, {.source_training = false, .commit_ema = false});
    model.backward(ce_loss_source<double>(y, p).grad_logits);
    auto params = model.params();
    std::size_t total = 0;
    for (auto* q : params) total += static_cast<std::size_t>(q->value.size());
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (int k = 0; k < 50; ++k) {
      std::size_t flat = pick(gen);
      std::size_t which = 0;
      while (flat >= static_cast<std::size_t>(params[which]->value.size())) flat -= static_cast<std::size_t>(params[which++]->value.size());
      auto* q = params[which];
      double& v = q->value.data()[flat];
      const double orig = v, h = 1e-6;
      v = orig + h;
      const double up = source_loss(model, x, y);
      v = orig - h;
      const double dn = source_loss(model, x, y);
      v = orig;
      const double fd = (up - dn) / (2 * h);
      const double an = q->grad.data()[flat];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      EXPECT_LE(rel, 1e-4) << q->name << "[" << flat << "] analytic " << an << " numeric " << fd
                           << " mode " << static_cast<int>(mode.mode);
    }
  }
}

TEST(Classifier, GradientsAccumulateUntilZeroed) {
  Classifier<double> model(tiny_arch(), 5);
  auto gen = gtta::testing::rng(64);
  const auto x = gtta::testing::random_tensor<double>(gen, Shape{3, 3, 16, 16});
  const std::vector<int> y{0, 1, 2};
  model.zero_grad();
  model.backward(ce_loss_source<double>(y, model.predict_proba(x)).grad_logits);
  const Matrix<double> once = model.params().back()->grad;
  model.backward(ce_loss_source<double>(y, model.predict_proba(x)).grad_logits);
  EXPECT_TRUE(model.params().back()->grad.isApprox(2.0 * once, 1e-12));
  model.zero_grad();
  EXPECT_EQ(model.params().back()->grad.squaredNorm(), 0.0);
}

TEST(SourceTraining, IsDeterministicAndLearns) {
  const auto data = generate_dataset(71, 4, 400, 16);
  SourceTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  auto a = train_source(data, tiny_arch(), cfg);
  auto b = train_source(data, tiny_arch(), cfg);
  EXPECT_EQ(a.model.checksum(), b.model.checksum());
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(a.model.source_stats(), b.model.source_stats());
  EXPECT_EQ(a.model.bn_mode().mode, BnMode::eval_stats);
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  EXPECT_GT(accuracy(a.model, generate_dataset(72, 4, 200, 16)), 0.5);
}

TEST(SourceTraining, ZeroEpochsIsNearChance) {
  const auto data = generate_dataset(73, 4, 400, 16);
  SourceTrainConfig cfg;
  cfg.epochs = 0;
  auto r = train_source(data, tiny_arch(), cfg);
  EXPECT_TRUE(r.epoch_losses.empty());
  EXPECT_LT(accuracy(r.model, data), 0.5);
  cfg.batch_size = 1;
  EXPECT_THROW(train_source(data, tiny_arch(), cfg), ParameterError);
  EXPECT_THROW(train_source(data, tiny_arch(5), SourceTrainConfig{}), ParameterError);
}

TEST(Checkpoint, ClassifierRoundTripIsExact) {
  const auto dir = std::filesystem::temp_directory_path() / "gtta_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto data = generate_dataset(74, 4, 200, 16);
  SourceTrainConfig cfg;
  cfg.epochs = 1;
  auto model = train_source(data, tiny_arch(), cfg).model;
  save_checkpoint(model, dir / "clf");
  auto back = load_checkpoint(dir / "clf");
  EXPECT_EQ(back.checksum(), model.checksum());
  EXPECT_EQ(back.source_stats(), model.source_stats());
  EXPECT_EQ(back.arch(), model.arch());
  back.set_bn_mode(model.bn_mode());
  EXPECT_EQ(back.forward(data.images.select(std::vector<Index>{0, 1, 2})),
            model.forward(data.images.select(std::vector<Index>{0, 1, 2})));

  StyleEncoder<float> enc(StyleArch{}, 3);
  StyleDecoder<float> dec(StyleArch{}, 4);
  save_checkpoint(enc, dir / "enc", 3);
  save_checkpoint(dec, dir / "dec", 4);
  EXPECT_EQ(load_encoder_checkpoint(dir / "enc").checksum(), enc.checksum());
  EXPECT_EQ(load_decoder_checkpoint(dir / "dec").checksum(), dec.checksum());
  EXPECT_THROW(load_checkpoint(dir / "enc"), ParameterError);
  EXPECT_NE(architecture_hash(tiny_arch()), architecture_hash(tiny_arch(5)));
  std::filesystem::remove_all(dir);
}

TEST(EncoderPretraining, ProducesAFrozenEncoderWithFallingLoss) {
  const auto data = generate_dataset(75, 4, 100, 16);
  EncoderTrainConfig cfg;
  cfg.iterations = 40;
  std::vector<double> losses;
  auto enc = pretrain_encoder(data, StyleArch{}, cfg, &losses);
  EXPECT_TRUE(enc.frozen());
  ASSERT_EQ(losses.size(), 40u);
  EXPECT_LT(losses.back(), losses.front());
}
