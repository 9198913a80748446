#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gtta/engine.hpp"

namespace gtta {

struct DataConfig {
  std::uint64_t seed = 0;
  int class_count = 8;
  Index side = 16;
  Index train_samples = 10000;
  Index test_samples = 1000;
  bool operator==(const DataConfig&) const = default;
};

struct MethodEntry {
  /// Row name in tables; defaults to the method name.
  std::string label;
  AdaptConfig adapt;
  bool operator==(const MethodEntry&) const = default;
};

/// Absent axes are not swept. Present axes must be non-empty.
struct SweepAxes {
  std::optional<std::vector<double>> lambdas;
  std::optional<std::vector<int>> updates;
  std::optional<std::vector<double>> fractions;
  std::optional<std::vector<int>> windows;
  bool operator==(const SweepAxes&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  ArchConfig arch;
  SourceTrainConfig source_training;
  EncoderTrainConfig encoder_training;
  DecoderTrainConfig decoder_training;
  ScheduleMode schedule = ScheduleMode::continual;
  std::vector<CorruptionKind> corruptions = all_corruptions();
  int batches_per_domain = 20;
  std::vector<MethodEntry> methods;
  SweepAxes sweep;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out = "results";

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Names usable with --preset.
std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name);
/// Dotted override. Experiment-level keys ("batches_per_domain", "data.test_samples") are
/// set directly; anything else is applied to every method whose config has that key.
void apply_override(ExperimentConfig& c, std::string_view key, std::string_view value);

/// One (label, adapt config) pair per point of the sweep grid.
std::vector<MethodEntry> expand_cells(const ExperimentConfig& c);

double error_rate(std::span<const int> predictions, std::span<const int> labels);

struct ResultRow {
  std::string method;
  std::size_t domain = 0;
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 5;
  std::uint64_t seed = 0;
  double error = 0.0;
  bool operator==(const ResultRow&) const = default;
};

class ResultTable {
 public:
  void add(ResultRow row);
  void add(std::string_view method, std::uint64_t seed, const SequenceReport& report);

  const std::vector<ResultRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  /// Method labels in first-seen order.
  std::vector<std::string> methods() const;
  ResultTable filter_method(std::string_view method) const;

  /// Mean over seeds for each domain index, in schedule order.
  std::vector<double> per_domain_mean(std::string_view method) const;
  /// Mean over every row of the method (equivalently over domains then seeds when the
  /// grid is complete).
  double overall_mean(std::string_view method) const;

  void write_csv(const std::filesystem::path& path) const;
  void write_csv(std::ostream& os) const;
  static ResultTable read_csv(const std::filesystem::path& path);

  bool operator==(const ResultTable&) const = default;

 private:
  std::vector<ResultRow> rows_;
};

double severity5_mean(const ResultTable& table);
double severity5_mean(const ResultTable& table, std::string_view method);

struct CellFailure {
  std::string method;
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentResult {
  ResultTable table;
  std::vector<CellFailure> failures;
  double source_clean_accuracy = 0.0;
  bool ok() const { return failures.empty(); }
};

/// Shared, seed-independent inputs: the data and the trained source model, plus the style
/// networks built so far (keyed by their training settings).
struct ExperimentAssets {
  LabeledImageSet train;
  LabeledImageSet test;
  ClassifierF source;
  std::map<std::string, StyleNetwork> styles;
};

/// Generates the data and trains or loads (from out/cache) the source model.
ExperimentAssets prepare_assets(const ExperimentConfig& c, std::ostream* log = nullptr);
/// Pretrained encoder and decoder for a style config, trained once and cached on disk.
const StyleNetwork& style_network(ExperimentAssets& assets, const ExperimentConfig& c, const StyleConfig& style,
                                  std::ostream* log = nullptr);

/// Validates, prepares the output directory, runs every (cell, seed) and writes
/// results.csv, experiment.json and one JSON per run.
ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream* log = nullptr);

/// Text tables per method: one column per domain plus the mean, averaged over seeds.
void print_report(const ResultTable& table, std::ostream& os);

}  // namespace gtta
