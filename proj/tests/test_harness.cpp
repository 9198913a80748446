#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gtta/harness.hpp"

using namespace gtta;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream s;
  s << is.rdbuf();
  return s.str();
}

ExperimentConfig tiny_experiment(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.name = "tiny";
  c.data.class_count = 4;
  c.data.train_samples = 200;
  c.data.test_samples = 64;
  c.arch.class_count = 4;
  c.arch.widths = {8, 8};
  c.source_training.epochs = 2;
  c.corruptions = {CorruptionKind::gaussian_noise, CorruptionKind::brightness};
  c.batches_per_domain = 2;
  for (auto [m, label] : {std::pair{Method::source, "source"}, std::pair{Method::gtta_mix, "gtta_mix"}}) {
    MethodEntry e{label, AdaptConfig::defaults_for(m)};
    e.adapt.batch_size_test = 16;
    e.adapt.batch_size_source = 16;
    e.adapt.lr = 1e-3;
    c.methods.push_back(e);
  }
  c.seeds = {0, 1, 2};
  c.out = out.string();
  return c;
}

ResultRow row(std::string method, std::size_t domain, int severity, std::uint64_t seed, double error) {
  return ResultRow{std::move(method), domain, CorruptionKind::contrast, severity, seed, error};
}

}  // namespace

TEST(ErrorRate, KnownValuesAndErrors) {
  const std::vector<int> labels{0, 1, 2, 3};
  EXPECT_EQ(error_rate(std::vector<int>{0, 1, 2, 3}, labels), 0.0);
  EXPECT_EQ(error_rate(std::vector<int>{1, 2, 3, 0}, labels), 100.0);
  EXPECT_EQ(error_rate(std::vector<int>{0, 1, 2, 0}, labels), 25.0);
  EXPECT_THROW(error_rate(std::vector<int>{}, std::vector<int>{}), ParameterError);
  EXPECT_THROW(error_rate(std::vector<int>{0}, labels), ParameterError);
}

TEST(ResultTable, AggregatesRecomputeFromRows) {
  ResultTable t;
  t.add(row("a", 0, 5, 0, 10.0));
  t.add(row("a", 1, 3, 0, 20.0));
  t.add(row("a", 0, 5, 1, 30.0));
  t.add(row("a", 1, 3, 1, 40.0));
  t.add(row("b", 0, 5, 0, 50.0));
  EXPECT_EQ(t.methods(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.per_domain_mean("a"), (std::vector<double>{20.0, 30.0}));
  EXPECT_EQ(t.overall_mean("a"), 25.0);
  EXPECT_EQ(severity5_mean(t, "a"), 20.0);
  EXPECT_EQ(severity5_mean(t), 30.0);
  EXPECT_EQ(t.filter_method("b").rows().size(), 1u);
  EXPECT_THROW(t.add(row("a", 0, 5, 0, 100.5)), ParameterError);
  EXPECT_THROW(t.add(row("a", 0, 5, 0, -1.0)), ParameterError);
  EXPECT_THROW(t.overall_mean("c"), ParameterError);
  ResultTable low;
  low.add(row("a", 0, 2, 0, 5.0));
  EXPECT_THROW(severity5_mean(low), ParameterError);
}

TEST(ResultTable, CsvRoundTripIsExact) {
  const auto dir = std::filesystem::temp_directory_path() / "gtta_test_csv";
  std::filesystem::create_directories(dir);
  ResultTable t;
  t.add(row("gtta_mix[lambda=0.25,updates=4]", 0, 5, 0, 100.0 / 3.0));
  t.add(row("bn1", 3, 1, 7, 0.1 + 0.2));
  t.add(row("source", 10, 4, 2, 0.0));
  t.write_csv(dir / "r.csv");
  EXPECT_EQ(ResultTable::read_csv(dir / "r.csv"), t);
  EXPECT_EQ(slurp(dir / "r.csv").substr(0, 38), "method,domain,kind,severity,seed,error");
  std::ofstream(dir / "bad.csv") << "a,b\n";
  EXPECT_THROW(ResultTable::read_csv(dir / "bad.csv"), ParameterError);
  std::filesystem::remove_all(dir);
}

TEST(ExperimentConfig, JsonRoundTripAndValidation) {
  auto c = preset("ablation-updates");
  c.decoder_training.lr = 5e-4;
  c.data.train_samples = 999;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ExperimentConfig>(), c);
  EXPECT_THROW(nlohmann::json::array().get<ExperimentConfig>(), ConfigurationError);
  auto bad = c;
  bad.methods.push_back(bad.methods.front());
  EXPECT_THROW(bad.validate(), ConfigurationError);
  bad = c;
  bad.arch.class_count = 5;
  EXPECT_THROW(bad.validate(), ConfigurationError);
  bad = c;
  bad.sweep.updates = std::vector<int>{};
  EXPECT_THROW(bad.validate(), ConfigurationError);
  bad = c;
  bad.sweep.updates = std::vector<int>{0};
  EXPECT_THROW(bad.validate(), ConfigurationError);
}

TEST(Presets, AllValidateAndUnknownNamesThrow) {
  for (const auto& n : preset_names()) EXPECT_NO_THROW(preset(n).validate()) << n;
  EXPECT_THROW(preset("nope"), ConfigurationError);
  EXPECT_EQ(preset("gradual-toy").schedule, ScheduleMode::gradual);
  EXPECT_EQ(preset("gradual-toy").batches_per_domain, preset("continual-toy").batches_per_domain);
}

TEST(Overrides, ExperimentAndMethodKeys) {
  auto c = preset("continual-toy");
  apply_override(c, "batches_per_domain", "7");
  EXPECT_EQ(c.batches_per_domain, 7);
  apply_override(c, "data.test_samples", "300");
  EXPECT_EQ(c.data.test_samples, 300);
  apply_override(c, "mixup.lambda", "0.5");
  for (const auto& m : c.methods)
    if (m.adapt.mixup) {
      EXPECT_EQ(m.adapt.mixup->lambda, 0.5);
    }
  apply_override(c, "bn.variant", "bn_ema");
  for (const auto& m : c.methods) {
    if (m.adapt.method == Method::source)
      EXPECT_EQ(m.adapt.bn.variant, BnVariant::bn0);
    else
      EXPECT_EQ(m.adapt.bn.variant, BnVariant::bn_ema);
  }
  apply_override(c, "schedule", "gradual");
  EXPECT_EQ(c.schedule, ScheduleMode::gradual);
  EXPECT_THROW(apply_override(c, "no_such_key", "1"), ConfigurationError);
  EXPECT_THROW(apply_override(c, "data.nothing", "1"), ConfigurationError);
}

TEST(ExpandCells, CartesianSweepWithApplicableAxesOnly) {
  auto c = preset("ablation-updates");
  c.sweep.fractions = std::vector<double>{1.0, 0.5};
  c.methods.push_back(MethodEntry{"bn1", AdaptConfig::defaults_for(Method::bn_variant)});
  const auto cells = expand_cells(c);
  // gtta_mix: 4 updates x 2 fractions, self-training: 4 updates (no source), bn1: neither.
  ASSERT_EQ(cells.size(), 8u + 4u + 1u);
  EXPECT_EQ(cells.front().label, "gtta_mix[updates=1,fraction=1]");
  EXPECT_EQ(cells.front().adapt.updates_per_batch, 1);
  EXPECT_EQ(cells[1].adapt.source_fraction, 0.5);
  EXPECT_EQ(cells.back().label, "bn1");
  std::set<std::string> labels;
  for (const auto& cell : cells) labels.insert(cell.label);
  EXPECT_EQ(labels.size(), cells.size());
}

TEST(RunExperiment, CardinalityFilesAndBitIdenticalRerun) {
  const auto root = std::filesystem::temp_directory_path() / "gtta_test_experiment";
  std::filesystem::remove_all(root);
  const auto c = tiny_experiment(root / "a");
  const auto first = run_experiment(c);
  ASSERT_TRUE(first.ok());
  EXPECT_EQ(first.table.rows().size(), 2u * 3u * 2u);
  EXPECT_TRUE(std::filesystem::exists(root / "a" / "experiment.json"));
  EXPECT_TRUE(std::filesystem::exists(root / "a" / "runs" / "gtta_mix__seed2.json"));
  EXPECT_EQ(ResultTable::read_csv(root / "a" / "results.csv"), first.table);
  const auto csv = slurp(root / "a" / "results.csv");

  // Warm cache in the same directory, then a cold cache elsewhere.
  run_experiment(c);
  EXPECT_EQ(slurp(root / "a" / "results.csv"), csv);
  run_experiment(tiny_experiment(root / "b"));
  EXPECT_EQ(slurp(root / "b" / "results.csv"), csv);
  std::filesystem::remove_all(root);
}

TEST(RunExperiment, FailedCellsAreReportedNotThrown) {
  const auto root = std::filesystem::temp_directory_path() / "gtta_test_failing";
  std::filesystem::remove_all(root);
  auto c = tiny_experiment(root);
  c.seeds = {0};
  c.methods[1].adapt.lr = 1e9;
  const auto r = run_experiment(c);
  EXPECT_EQ(r.table.filter_method("source").rows().size(), 2u);
  if (!r.ok()) {
    EXPECT_EQ(r.failures.front().method, "gtta_mix");
  }
  c.methods.clear();
  EXPECT_THROW(run_experiment(c), ConfigurationError);
  std::filesystem::remove_all(root);
}
