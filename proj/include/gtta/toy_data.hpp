#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gtta/tensor.hpp"

namespace gtta {

/// Labeled synthetic images: class-specific oriented gratings with nuisance variation
/// (phase, period, amplitude, tint, base level, sensor noise).
struct LabeledImageSet {
  ImageBatch images;
  std::vector<int> labels;
  int class_count = 0;
  std::uint64_t seed = 0;

  Index size() const { return images.batch(); }
  LabeledImageSet subset(std::span<const Index> indices) const;
  /// Samples [begin, end).
  LabeledImageSet slice(Index begin, Index end) const;
};

struct DatasetParams {
  std::uint64_t seed = 0;
  int class_count = 8;
  Index samples = 2000;
  Index side = 16;
};

LabeledImageSet generate_dataset(std::uint64_t seed, int class_count, Index samples, Index side);
inline LabeledImageSet generate_dataset(const DatasetParams& p) {
  return generate_dataset(p.seed, p.class_count, p.samples, p.side);
}

enum class CorruptionKind { gaussian_noise, blur, contrast, brightness, pixelate };

std::string_view to_string(CorruptionKind kind);
CorruptionKind parse_corruption(std::string_view name);
/// The five kinds in benchmark order.
std::vector<CorruptionKind> all_corruptions();

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 5;
  bool operator==(const CorruptionSpec&) const = default;
};

/// Applies the corruption to every image. Randomness is keyed by (seed, sample index), and
/// the same draws are reused across severities so distortion grows monotonically.
ImageBatch apply_corruption(const ImageBatch& batch, CorruptionSpec spec, std::uint64_t seed);

enum class ScheduleMode { continual, gradual };
std::string_view to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(std::string_view name);

struct ScheduleEntry {
  CorruptionSpec corruption;
  int batch_count = 0;
  bool operator==(const ScheduleEntry&) const = default;
};

struct DomainSchedule {
  ScheduleMode mode = ScheduleMode::continual;
  std::vector<ScheduleEntry> entries;
  int total_batches() const;
};

/// Continual: each kind once at severity 5. Gradual: per kind, severities 1..5..1.
DomainSchedule build_schedule(ScheduleMode mode, const std::vector<CorruptionKind>& kinds, int batches_per_domain);
DomainSchedule build_schedule(std::string_view mode, const std::vector<CorruptionKind>& kinds,
                              int batches_per_domain);

struct StreamBatch {
  std::size_t domain = 0;
  std::size_t index = 0;  ///< global batch index
  CorruptionSpec corruption;
  ImageBatch images;
  std::vector<int> labels;
};

/// Replays a schedule over a clean pool: each domain visits the pool in its own seeded order
/// and corrupts each batch with a key derived from (seed, global batch index).
class TestStream {
 public:
  TestStream(const LabeledImageSet& pool, DomainSchedule schedule, Index batch_size, std::uint64_t seed);

  std::optional<StreamBatch> next();
  const DomainSchedule& schedule() const { return schedule_; }
  Index batch_size() const { return batch_size_; }

 private:
  const LabeledImageSet* pool_;
  DomainSchedule schedule_;
  Index batch_size_;
  std::uint64_t seed_;
  std::size_t domain_ = 0;
  int batch_in_domain_ = 0;
  std::size_t global_ = 0;
  std::vector<Index> order_;
};

/// Flat little-endian float32 NCHW blob at <stem>.bin plus a JSON sidecar at <stem>.json.
void save_dataset(const LabeledImageSet& data, const std::filesystem::path& stem);
LabeledImageSet load_dataset(const std::filesystem::path& stem);

}  // namespace gtta
