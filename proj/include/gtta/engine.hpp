#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gtta/bn_adapt.hpp"
#include "gtta/mixup.hpp"
#include "gtta/model.hpp"
#include "gtta/self_training.hpp"
#include "gtta/style_transfer.hpp"
#include "gtta/toy_data.hpp"

namespace gtta {

enum class Method { source, bn_variant, self_training_only, source_replay, gtta_mix, gtta_st };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

struct SelfTrainingConfig {
  double alpha_th = 0.1;
  bool filtering = true;
  /// Off reproduces the "intermediate domain only" rows: no test loss at all.
  bool enabled = true;
  bool operator==(const SelfTrainingConfig&) const = default;
};

struct StyleConfig {
  std::size_t capacity = 16;
  double lambda_s = 10.0;
  int pretrain_iters = 1000;
  double decoder_lr = 1e-3;
  bool operator==(const StyleConfig&) const = default;
};

struct AdaptConfig {
  Method method = Method::gtta_mix;
  /// Statistics convention of every forward pass (predictions and both update steps).
  BNAdaptConfig bn = BNAdaptConfig::make(BnVariant::bn1);
  int updates_per_batch = 1;
  double lr = 1e-5;
  Index batch_size_test = 64;
  Index batch_size_source = 64;
  double source_fraction = 1.0;
  double source_weight = 1.0;
  double test_weight = 1.0;
  /// Sliding-window buffer size for single-sample streams; 0 means batch mode.
  int window = 0;
  std::optional<MixupConfig> mixup;
  std::optional<StyleConfig> style;
  std::optional<SelfTrainingConfig> st;

  /// A config with exactly the sub-configs the method needs, at their defaults.
  static AdaptConfig defaults_for(Method method);
  void validate() const;
  bool performs_updates() const;
  bool uses_source() const;
  bool operator==(const AdaptConfig&) const = default;
};

void to_json(nlohmann::json& j, const AdaptConfig& c);
void from_json(const nlohmann::json& j, AdaptConfig& c);
/// Applies one dotted key ("mixup.lambda", "bn.variant", "lr", ...) from a JSON value.
void apply_override(AdaptConfig& c, std::string_view key, const nlohmann::json& value);

/// The retained part of the source set; draws are uniform with replacement.
class SourceReservoir {
 public:
  SourceReservoir(const LabeledImageSet& source, double fraction, std::uint64_t seed);

  /// Deterministic in (seed, step).
  LabeledImageSet sample(Index n, std::uint64_t step) const;
  const LabeledImageSet& data() const { return data_; }
  Index size() const { return data_.size(); }
  double fraction() const { return fraction_; }

 private:
  LabeledImageSet data_;
  double fraction_;
  std::uint64_t seed_;
};

LabeledImageSet sample_source(const SourceReservoir& reservoir, Index n, std::uint64_t step_seed);

/// FIFO of the most recent single test samples.
class SlidingBuffer {
 public:
  explicit SlidingBuffer(Index capacity);

  /// Adds a one-sample tensor, evicting the oldest. Returns true when an update is due,
  /// i.e. once every `capacity` pushes.
  bool push(const ImageBatch& sample);
  /// Oldest first. A partially filled buffer is padded by cycling its contents.
  ImageBatch contents(bool pad = true) const;
  Index size() const { return static_cast<Index>(samples_.size()); }
  Index capacity() const { return capacity_; }
  bool full() const { return size() == capacity_; }
  Index steps_since_update() const { return since_update_; }

 private:
  Index capacity_;
  std::deque<ImageBatch> samples_;
  Index since_update_ = 0;
};

struct StepReport {
  bool updated = false;
  int updates = 0;
  double source_loss = 0.0;
  double test_loss = 0.0;
  bool test_loss_skipped = false;
  double kept_fraction = 0.0;
  double gamma = 0.0;
  std::optional<double> decoder_loss;
};

void to_json(nlohmann::json& j, const StepReport& r);

struct StyleNetwork {
  StyleEncoder<float> encoder;
  StyleDecoder<float> decoder;
};

/// Owns every piece of mutable adaptation state for one online run.
class Adapter {
 public:
  Adapter(const ClassifierF& source_model, AdaptConfig config, const LabeledImageSet* source_data,
          std::optional<StyleNetwork> style, std::uint64_t seed);

  /// Predictions with the current parameters; BN statistics handled per the configured
  /// variant (for EMA this advances the running statistics once).
  std::vector<int> predict(const ImageBatch& batch);
  /// The two-step update on one test batch, repeated updates_per_batch times.
  StepReport adapt_step(const ImageBatch& test_batch);

  ClassifierF& model() { return model_; }
  const AdaptConfig& config() const { return config_; }
  const ThresholdState& threshold() const { return threshold_; }
  const std::optional<StyleNetwork>& style() const { return style_; }
  const StyleMemory<float>* memory() const { return memory_ ? &*memory_ : nullptr; }
  std::uint64_t steps() const { return step_; }

 private:
  ImageBatch stylized_source(const LabeledImageSet& src, const ImageBatch& test, int rep, StepReport& report);

  ClassifierF model_;
  AdaptConfig config_;
  std::optional<SourceReservoir> reservoir_;
  std::optional<StyleNetwork> style_;
  std::optional<StyleMemory<float>> memory_;
  Adam<float> optimizer_;
  Adam<float> decoder_optimizer_;
  ThresholdState threshold_;
  std::uint64_t seed_;
  std::uint64_t step_ = 0;
};

/// Same as calling Adapter::adapt_step; kept as a free function for symmetry with the rest
/// of the API.
StepReport adapt_step(Adapter& adapter, const ImageBatch& test_batch);

struct DomainResult {
  std::size_t index = 0;
  CorruptionSpec corruption;
  Index samples = 0;
  Index errors = 0;
  double error_rate() const { return samples ? 100.0 * static_cast<double>(errors) / static_cast<double>(samples) : 0.0; }
};

struct SequenceReport {
  std::vector<DomainResult> domains;
  std::vector<double> batch_errors;
  std::vector<StepReport> steps;
  /// Parameter checksum after the last batch of each domain.
  std::vector<std::string> domain_end_checksums;
  std::string initial_checksum;
  Index updates = 0;
  /// Sliding-window mode: predictions made before the buffer was full.
  Index partial_buffer_predictions = 0;
  bool stream_shorter_than_buffer = false;

  bool empty() const { return domains.empty(); }
  /// Mean of the per-domain error rates.
  double mean_error() const;
};

void to_json(nlohmann::json& j, const SequenceReport& r);

using ProgressFn = void (*)(const DomainResult&, void*);

/// Predict-then-adapt over the stream, no resets at domain boundaries.
SequenceReport run_sequence(Adapter& adapter, TestStream& stream, ProgressFn progress = nullptr,
                            void* progress_ctx = nullptr);

/// Builds the adapter and the stream from their ingredients.
SequenceReport run_sequence(const ClassifierF& source_model, const LabeledImageSet& source_data,
                            const LabeledImageSet& test_pool, const DomainSchedule& schedule,
                            const AdaptConfig& config, std::uint64_t seed,
                            const std::optional<StyleNetwork>& style = std::nullopt);

/// Single-sample protocol: every arriving sample is predicted from the whole buffer and a
/// full adapt_step over the buffer runs once every `capacity` samples.
SequenceReport sliding_window_adapt(Adapter& adapter, TestStream& stream, Index capacity,
                                    ProgressFn progress = nullptr, void* progress_ctx = nullptr);

}  // namespace gtta
