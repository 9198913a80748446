#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "gtta/engine.hpp"
#include "gtta/io.hpp"
#include "helpers.hpp"

using namespace gtta;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.class_count = 4;
  a.widths = {8, 8};
  return a;
}

struct Shared {
  LabeledImageSet train = generate_dataset(81, 4, 300, 16);
  LabeledImageSet pool = generate_dataset(82, 4, 120, 16);
  ClassifierF source = [this] {
    SourceTrainConfig cfg;
    cfg.epochs = 3;
    return train_source(train, tiny_arch(), cfg).model;
  }();
};

const Shared& shared() {
  static const Shared s;
  return s;
}

AdaptConfig config_for(Method m) {
  auto c = AdaptConfig::defaults_for(m);
  c.lr = 1e-3;
  c.batch_size_test = 16;
  c.batch_size_source = 16;
  return c;
}

DomainSchedule short_schedule(int batches = 3) {
  return build_schedule(ScheduleMode::continual, {CorruptionKind::gaussian_noise, CorruptionKind::contrast}, batches);
}

std::string hex(ClassifierF& m) { return io::hex64(m.checksum()); }

StyleNetwork style_network() {
  StyleNetwork s{StyleEncoder<float>(StyleArch{}, 1), StyleDecoder<float>(StyleArch{}, 2)};
  s.encoder.set_frozen(true);
  return s;
}

}  // namespace

TEST(AdaptConfig, DefaultsValidateAndMismatchesAreRejected) {
  for (auto m : {Method::source, Method::bn_variant, Method::self_training_only, Method::source_replay,
                 Method::gtta_mix, Method::gtta_st}) {
    EXPECT_NO_THROW(AdaptConfig::defaults_for(m).validate()) << to_string(m);
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("tent"), ConfigurationError);
  auto c = AdaptConfig::defaults_for(Method::gtta_mix);
  c.mixup.reset();
  EXPECT_THROW(c.validate(), ConfigurationError);
  c = AdaptConfig::defaults_for(Method::bn_variant);
  c.mixup = MixupConfig{};
  EXPECT_THROW(c.validate(), ConfigurationError);
  c = AdaptConfig::defaults_for(Method::source);
  c.bn = BNAdaptConfig::make(BnVariant::bn1);
  EXPECT_THROW(c.validate(), ConfigurationError);
  c = AdaptConfig::defaults_for(Method::gtta_mix);
  c.window = 1;
  EXPECT_THROW(c.validate(), ConfigurationError);
  c.window = 0;
  c.updates_per_batch = 0;
  EXPECT_THROW(c.validate(), ConfigurationError);
  c.updates_per_batch = 1;
  c.source_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigurationError);
}

TEST(AdaptConfig, JsonRoundTripAndOverrides) {
  auto c = AdaptConfig::defaults_for(Method::gtta_st);
  c.updates_per_batch = 3;
  c.bn = BNAdaptConfig::make(BnVariant::bn_ema, 0.2);
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<AdaptConfig>(), c);
  apply_override(c, "style.lambda_s", 0.5);
  EXPECT_EQ(c.style->lambda_s, 0.5);
  apply_override(c, "bn.variant", "bn0_1");
  EXPECT_EQ(c.bn, BNAdaptConfig::make(BnVariant::bn0_1));
  apply_override(c, "lr", 2e-4);
  EXPECT_EQ(c.lr, 2e-4);
  EXPECT_ANY_THROW(apply_override(c, "mixup.lambda", 0.3));
}

TEST(Adapter, SourceMethodNeverChangesTheModel) {
  auto model = shared().source;
  auto r = run_sequence(model, shared().train, shared().pool, short_schedule(), config_for(Method::source), 0);
  ASSERT_EQ(r.domains.size(), 2u);
  for (const auto& c : r.domain_end_checksums) EXPECT_EQ(c, r.initial_checksum);
  EXPECT_EQ(r.updates, 0);
  EXPECT_EQ(r.initial_checksum, hex(model));
}

TEST(Adapter, ZeroLambdaMixupEqualsSourceReplay) {
  auto mix = config_for(Method::gtta_mix);
  mix.mixup->lambda = 0.0;
  mix.st->filtering = false;
  auto replay = config_for(Method::source_replay);
  replay.st->filtering = false;
  const auto a = run_sequence(shared().source, shared().train, shared().pool, short_schedule(), mix, 4);
  const auto b = run_sequence(shared().source, shared().train, shared().pool, short_schedule(), replay, 4);
  EXPECT_EQ(a.domain_end_checksums, b.domain_end_checksums);
  EXPECT_EQ(a.batch_errors, b.batch_errors);
  EXPECT_NE(a.domain_end_checksums.back(), a.initial_checksum);
}

TEST(Adapter, SingleReplayStepMatchesHandComputedAdam) {
  auto cfg = config_for(Method::source_replay);
  cfg.st->enabled = false;
  Adapter adapter(shared().source, cfg, &shared().train, std::nullopt, 7);
  auto gen = gtta::testing::rng(83);
  const auto test = gtta::testing::random_tensor(gen, Shape{16, 3, 16, 16});
  const auto rep = adapter.adapt_step(test);
  EXPECT_EQ(rep.updates, 1);

  ClassifierF manual = shared().source;
  manual.set_bn_mode({BnMode::train_stats, 1.0});
  const SourceReservoir reservoir(shared().train, 1.0, 7);
  const auto src = reservoir.sample(16, hash_key({0, 0}));
  manual.zero_grad();
  const auto probs = manual.predict_proba(src.images, {.source_training = false, .commit_ema = false});
  const auto ce = ce_loss_source<float>(src.labels, probs);
  EXPECT_NEAR(rep.source_loss, ce.value, 1e-9);
  manual.backward(ce.grad_logits);
  Adam<float> adam;
  adam.step(manual.params(), cfg.lr);
  EXPECT_EQ(hex(adapter.model()), hex(manual));
}

TEST(Adapter, ThresholdSeesEachBatchOnceEvenWithRepeats) {
  auto cfg = config_for(Method::self_training_only);
  cfg.updates_per_batch = 4;
  Adapter adapter(shared().source, cfg, &shared().train, std::nullopt, 1);
  auto gen = gtta::testing::rng(84);
  const auto test = gtta::testing::random_tensor(gen, Shape{16, 3, 16, 16});
  ClassifierF frozen = shared().source;
  frozen.set_bn_mode({BnMode::train_stats, 1.0});
  const auto expected = update_threshold(ThresholdState{0.0, cfg.st->alpha_th, false},
                                         frozen.predict_proba(test, {.source_training = false, .commit_ema = false}));
  const auto rep = adapter.adapt_step(test);
  EXPECT_EQ(rep.updates, 4);
  EXPECT_EQ(adapter.threshold().gamma, expected.gamma);
  EXPECT_EQ(rep.gamma, expected.gamma);
}

TEST(Adapter, PredictionsPrecedeAdaptation) {
  const auto cfg = config_for(Method::gtta_mix);
  TestStream stream(shared().pool, short_schedule(), 16, 3);
  Adapter adapter(shared().source, cfg, &shared().train, std::nullopt, 3);
  ClassifierF frozen = shared().source;
  frozen.set_bn_mode({BnMode::train_stats, 1.0});
  const auto first = stream.next();
  EXPECT_EQ(adapter.predict(first->images), argmax_rows(frozen.forward(first->images)));
  adapter.adapt_step(first->images);
  const auto r = run_sequence(shared().source, shared().train, shared().pool, short_schedule(), cfg, 3);
  Index wrong = 0;
  const auto pred = argmax_rows(frozen.forward(first->images));
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != first->labels[i];
  EXPECT_DOUBLE_EQ(r.batch_errors.front(), 100.0 * static_cast<double>(wrong) / 16.0);
}

TEST(Adapter, StateCarriesAcrossDomainsAndRunsAreDeterministic) {
  const auto cfg = config_for(Method::gtta_mix);
  const auto a = run_sequence(shared().source, shared().train, shared().pool, short_schedule(), cfg, 5);
  const auto b = run_sequence(shared().source, shared().train, shared().pool, short_schedule(), cfg, 5);
  const auto c = run_sequence(shared().source, shared().train, shared().pool, short_schedule(), cfg, 6);
  EXPECT_EQ(a.domain_end_checksums, b.domain_end_checksums);
  EXPECT_EQ(a.batch_errors, b.batch_errors);
  EXPECT_NE(a.domain_end_checksums, c.domain_end_checksums);
  ASSERT_EQ(a.domain_end_checksums.size(), 2u);
  EXPECT_NE(a.domain_end_checksums[0], a.initial_checksum);
  EXPECT_NE(a.domain_end_checksums[1], a.domain_end_checksums[0]);
  EXPECT_EQ(a.updates, 6);
  EXPECT_EQ(a.steps.size(), 6u);
  EXPECT_DOUBLE_EQ(a.mean_error(), (a.domains[0].error_rate() + a.domains[1].error_rate()) / 2.0);
}

TEST(Adapter, EmaAdvancesOnPredictionOnly) {
  auto cfg = config_for(Method::gtta_mix);
  cfg.bn = BNAdaptConfig::make(BnVariant::bn_ema);
  Adapter adapter(shared().source, cfg, &shared().train, std::nullopt, 2);
  EXPECT_EQ(adapter.model().ema_stats(), shared().source.source_stats());
  auto gen = gtta::testing::rng(85);
  const auto test = gtta::testing::random_tensor(gen, Shape{16, 3, 16, 16});
  adapter.predict(test);
  const auto after_predict = adapter.model().ema_stats();
  EXPECT_FALSE(after_predict == shared().source.source_stats());
  adapter.adapt_step(test);
  EXPECT_EQ(adapter.model().ema_stats(), after_predict);
}

TEST(Adapter, StyleVariantFillsMemoryAndKeepsEncoder) {
  auto cfg = config_for(Method::gtta_st);
  cfg.style->capacity = 2;
  auto style = style_network();
  const auto enc_sum = style.encoder.checksum();
  Adapter adapter(shared().source, cfg, &shared().train, style, 8);
  auto gen = gtta::testing::rng(86);
  for (int s = 0; s < 3; ++s) {
    const auto rep = adapter.adapt_step(gtta::testing::random_tensor(gen, Shape{16, 3, 16, 16}));
    ASSERT_TRUE(rep.decoder_loss.has_value());
    EXPECT_GT(*rep.decoder_loss, 0.0);
  }
  ASSERT_NE(adapter.memory(), nullptr);
  EXPECT_EQ(adapter.memory()->size(), 2u);
  EXPECT_EQ(adapter.memory()->pushes(), 3u);
  auto enc_after = adapter.style()->encoder;
  EXPECT_EQ(enc_after.checksum(), enc_sum);
  EXPECT_THROW(Adapter(shared().source, cfg, &shared().train, std::nullopt, 8), ConfigurationError);
}

TEST(Adapter, MissingSourceDataIsAConfigurationError) {
  EXPECT_THROW(Adapter(shared().source, config_for(Method::gtta_mix), nullptr, std::nullopt, 0), ConfigurationError);
  EXPECT_NO_THROW(Adapter(shared().source, config_for(Method::bn_variant), nullptr, std::nullopt, 0));
}

TEST(Sequence, EmptyScheduleGivesEmptyReport) {
  const auto r = run_sequence(shared().source, shared().train, shared().pool, DomainSchedule{}, config_for(Method::gtta_mix), 0);
  EXPECT_TRUE(r.empty());
  EXPECT_TRUE(r.batch_errors.empty());
  EXPECT_EQ(r.updates, 0);
}

TEST(SlidingBuffer, FiresEveryCapacityPushesAndPadsCyclically) {
  SlidingBuffer two(2);
  std::vector<int> fired;
  for (int i = 1; i <= 6; ++i) {
    ImageBatch s(Shape{1, 1, 1, 1});
    s.data()(0, 0) = static_cast<float>(i);
    if (two.push(s)) fired.push_back(i);
  }
  EXPECT_EQ(fired, (std::vector<int>{2, 4, 6}));

  SlidingBuffer five(5);
  for (int i = 1; i <= 3; ++i) {
    ImageBatch s(Shape{1, 1, 1, 1});
    s.data()(0, 0) = static_cast<float>(i);
    EXPECT_FALSE(five.push(s));
  }
  EXPECT_FALSE(five.full());
  const auto padded = five.contents(true), raw = five.contents(false);
  ASSERT_EQ(padded.batch(), 5);
  ASSERT_EQ(raw.batch(), 3);
  const std::vector<float> expect{1, 2, 3, 1, 2};
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(padded.data()(0, i), expect[static_cast<std::size_t>(i)]);
  EXPECT_THROW(SlidingBuffer(1), ConfigurationError);
}

TEST(SlidingWindow, UpdateCountAndPartialBufferBookkeeping) {
  auto cfg = config_for(Method::gtta_mix);
  const auto sched = build_schedule(ScheduleMode::continual, {CorruptionKind::blur}, 1);
  {
    Adapter a(shared().source, cfg, &shared().train, std::nullopt, 0);
    TestStream s(shared().pool, sched, 6, 0);
    const auto r = sliding_window_adapt(a, s, 2);
    EXPECT_EQ(r.updates, 3);
    EXPECT_EQ(r.partial_buffer_predictions, 1);
    EXPECT_FALSE(r.stream_shorter_than_buffer);
    EXPECT_EQ(r.domains.front().samples, 6);
  }
  {
    Adapter a(shared().source, cfg, &shared().train, std::nullopt, 0);
    TestStream s(shared().pool, sched, 6, 0);
    const auto r = sliding_window_adapt(a, s, 6);
    EXPECT_EQ(r.updates, 1);
    EXPECT_EQ(r.partial_buffer_predictions, 5);
  }
  {
    Adapter a(shared().source, cfg, &shared().train, std::nullopt, 0);
    TestStream s(shared().pool, sched, 6, 0);
    const auto r = sliding_window_adapt(a, s, 8);
    EXPECT_EQ(r.updates, 0);
    EXPECT_TRUE(r.stream_shorter_than_buffer);
  }
}

namespace {

LabeledImageSet indexed_set(int n) {
  LabeledImageSet s;
  s.images = ImageBatch(Shape{n, 1, 1, 1});
  s.labels.resize(static_cast<std::size_t>(n));
  std::iota(s.labels.begin(), s.labels.end(), 0);
  s.class_count = n;
  return s;
}

}  // namespace

TEST(Reservoir, SizeAndFullRetention) {
  const auto set = indexed_set(200);
  EXPECT_EQ(SourceReservoir(set, 1.0, 0).data().labels, set.labels);
  EXPECT_EQ(SourceReservoir(set, 0.1, 0).size(), 20);
  EXPECT_EQ(SourceReservoir(set, 0.001, 0).size(), 1);
  const auto sub = SourceReservoir(set, 0.25, 3).data().labels;
  EXPECT_TRUE(std::is_sorted(sub.begin(), sub.end()));
  EXPECT_EQ(std::set<int>(sub.begin(), sub.end()).size(), sub.size());
  EXPECT_EQ(sub, SourceReservoir(set, 0.25, 3).data().labels);
  EXPECT_THROW(SourceReservoir(set, 1.5, 0), ConfigurationError);
  EXPECT_THROW(SourceReservoir(set, 1.0, 0).sample(0, 0), ParameterError);
}

TEST(Reservoir, DrawsAreUniform) {
  const int K = 10;
  const SourceReservoir r(indexed_set(K), 1.0, 9);
  std::vector<int> counts(K, 0);
  const int per_step = 20, steps = 500;
  for (int s = 0; s < steps; ++s)
    for (int l : r.sample(per_step, static_cast<std::uint64_t>(s)).labels) ++counts[static_cast<std::size_t>(l)];
  const double expected = static_cast<double>(per_step * steps) / K;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 9 degrees of freedom; the 0.999 quantile is 27.88.
  EXPECT_LT(chi2, 27.88);
  EXPECT_EQ(r.sample(5, 42).labels, sample_source(r, 5, 42).labels);
}
