#include <gtest/gtest.h>

#include "gtta/mixup.hpp"
#include "gtta/model.hpp"
#include "helpers.hpp"

using namespace gtta;

TEST(MixImages, EndpointsAreBitEqual) {
  auto gen = gtta::testing::rng(31);
  const auto s = gtta::testing::random_tensor(gen, Shape{3, 3, 8, 8});
  const auto t = gtta::testing::random_tensor(gen, Shape{2, 3, 8, 8});
  EXPECT_EQ(mix_images(s, 1, t, 0, 0.0).data(), s.sample(1).data());
  EXPECT_EQ(mix_images(s, 2, t, 1, 1.0).data(), t.sample(1).data());
}

TEST(MixImages, ThirdOfTheWay) {
  Tensor<double> s(Shape{1, 1, 2, 2}), t(Shape{1, 1, 2, 2});
  s.data().setConstant(0.0);
  t.data().setConstant(0.9);
  const auto m = mix_images(s, 0, t, 0, 1.0 / 3.0);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(m.data()(0, i), 0.3, 1e-15);
}

TEST(MixImages, StaysInsideTheConvexHullOfItsInputs) {
  auto gen = gtta::testing::rng(32);
  const auto s = gtta::testing::random_tensor(gen, Shape{1, 3, 6, 6});
  const auto t = gtta::testing::random_tensor(gen, Shape{1, 3, 6, 6});
  for (double l : {0.1, 0.25, 0.5, 0.8}) {
    const auto m = mix_images(s, 0, t, 0, l);
    const RowMatrix<float> lo = s.data().cwiseMin(t.data()), hi = s.data().cwiseMax(t.data());
    EXPECT_TRUE(((m.data() - lo).array() >= -1e-6f).all());
    EXPECT_TRUE(((hi - m.data()).array() >= -1e-6f).all());
  }
}

TEST(MixImages, RejectsBadArguments) {
  Tensor<float> s(Shape{1, 3, 4, 4}), t(Shape{1, 1, 4, 4});
  EXPECT_THROW(mix_images(s, 0, t, 0, 0.5), ParameterError);
  EXPECT_THROW(mix_images(s, 0, s, 0, -0.1), ParameterError);
  EXPECT_THROW(mix_images(s, 0, s, 0, 1.1), ParameterError);
  EXPECT_THROW((MixupConfig{2.0, true}.validate()), ConfigurationError);
}

TEST(SelectPartner, MatchesBruteForceDotProduct) {
  auto gen = gtta::testing::rng(33);
  std::uniform_int_distribution<int> size(1, 12);
  for (int trial = 0; trial < 150; ++trial) {
    const Index classes = size(gen) % 6 + 2, n = size(gen);
    const auto ps = gtta::testing::random_softmax(gen, 1, classes);
    const auto pt = gtta::testing::random_softmax(gen, n, classes);
    Index best = 0;
    double best_score = -1.0;
    for (Index i = 0; i < n; ++i) {
      double score = 0.0;
      for (Index c = 0; c < classes; ++c) score += ps(0, c) * pt(i, c);
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    EXPECT_EQ((select_partner<double>(ps.row(0), pt)), best) << "trial " << trial;
  }
}

TEST(SelectPartner, SingleTestSampleAndTies) {
  Matrix<double> ps(1, 3);
  ps << 0.2, 0.5, 0.3;
  Matrix<double> one(1, 3);
  one << 0.9, 0.05, 0.05;
  EXPECT_EQ((select_partner<double>(ps.row(0), one)), 0);
  Matrix<double> tie(3, 3);
  tie << 0.1, 0.1, 0.8, 0.1, 0.8, 0.1, 0.1, 0.8, 0.1;
  EXPECT_EQ((select_partner<double>(ps.row(0), tie)), 1);
  Matrix<double> all_same = Matrix<double>::Constant(4, 3, 1.0 / 3.0);
  EXPECT_EQ((select_partner<double>(ps.row(0), all_same)), 0);
  EXPECT_THROW((select_partner<double>(ps.row(0), Matrix<double>(0, 3))), ParameterError);
  EXPECT_THROW((select_partner<double>(ps.row(0), Matrix<double>(2, 4))), ParameterError);
}

TEST(MixedBatch, KeepsSourceLabelsAndUsesChosenPartners) {
  auto gen = gtta::testing::rng(34);
  const auto s = gtta::testing::random_tensor<double>(gen, Shape{5, 3, 4, 4});
  const auto t = gtta::testing::random_tensor<double>(gen, Shape{3, 3, 4, 4});
  const auto ps = gtta::testing::random_softmax(gen, 5, 4);
  const auto pt = gtta::testing::random_softmax(gen, 3, 4);
  const std::vector<int> labels{3, 0, 2, 2, 1};
  const auto mixed = build_mixed_batch<double>(s, labels, ps, t, pt, 0.25);
  EXPECT_EQ(mixed.labels, labels);
  ASSERT_EQ(mixed.images.shape(), s.shape());
  for (Index j = 0; j < 5; ++j) {
    const Index i = mixed.partners[static_cast<std::size_t>(j)];
    EXPECT_EQ(i, (select_partner<double>(ps.row(j), pt)));
    const Matrix<double> expect = 0.75 * s.sample_block(j) + 0.25 * t.sample_block(i);
    EXPECT_TRUE(mixed.images.sample_block(j).isApprox(expect, 1e-14));
  }
}

TEST(MixedBatch, SingleTestSampleIsEveryonesPartner) {
  auto gen = gtta::testing::rng(35);
  const auto s = gtta::testing::random_tensor<double>(gen, Shape{4, 3, 4, 4});
  const auto t = gtta::testing::random_tensor<double>(gen, Shape{1, 3, 4, 4});
  const auto mixed = build_mixed_batch<double>(s, std::vector<int>{0, 1, 2, 3}, gtta::testing::random_softmax(gen, 4, 3),
                                               t, gtta::testing::random_softmax(gen, 1, 3), 0.5);
  for (auto p : mixed.partners) EXPECT_EQ(p, 0);
}

TEST(MixedBatch, ModelOverloadDoesNotTouchEmaOrParameters) {
  ArchConfig arch;
  arch.class_count = 4;
  arch.widths = {8, 8};
  ClassifierF model(arch, 2);
  model.set_bn_mode(BNAdaptConfig::make(BnVariant::bn_ema).mode());
  auto gen = gtta::testing::rng(36);
  const auto s = gtta::testing::random_tensor(gen, Shape{4, 3, 16, 16});
  const auto t = gtta::testing::random_tensor(gen, Shape{6, 3, 16, 16});
  const auto before = model.checksum();
  const auto ema = model.ema_stats();
  const auto mixed = build_mixed_batch(s, std::vector<int>{0, 1, 2, 3}, t, model, MixupConfig{});
  EXPECT_EQ(mixed.images.batch(), 4);
  EXPECT_EQ(model.checksum(), before);
  EXPECT_EQ(model.ema_stats(), ema);
  EXPECT_THROW(build_mixed_batch(s, std::vector<int>{0, 1}, t, model, MixupConfig{}), ParameterError);
}
