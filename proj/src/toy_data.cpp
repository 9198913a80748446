#include "gtta/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "gtta/corruption_constants.hpp"
#include "gtta/io.hpp"
#include "gtta/rng.hpp"

namespace gtta {

namespace {

constexpr float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

void check_severity(int severity) {
  if (severity < 1 || severity > 5)
    throw ParameterError("corruption severity must lie in [1,5], got " + std::to_string(severity));
}

std::size_t sev_index(int severity) { return static_cast<std::size_t>(severity - 1); }

void add_noise(ImageBatch& x, double sigma, std::uint64_t seed) {
  for (Index n = 0; n < x.batch(); ++n) {
    auto gen = keyed_generator(seed, Stream::corruption, n);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (Index c = 0; c < x.channels(); ++c)
      for (auto& v : x.plane_of(n, c)) v = clamp01(v + static_cast<float>(sigma) * normal(gen));
  }
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
    total += w;
  }
  for (auto& w : k) w = static_cast<float>(w / total);
  return k;
}

Index reflect(Index i, Index n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

void blur(ImageBatch& x, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const Index h = x.height(), w = x.width();
  RowMatrix<float> tmp(h, w);
  for (Index n = 0; n < x.batch(); ++n)
    for (Index c = 0; c < x.channels(); ++c) {
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          float acc = 0;
          for (int t = -radius; t <= radius; ++t) acc += k[static_cast<std::size_t>(t + radius)] * x(n, c, y, reflect(xx + t, w));
          tmp(y, xx) = acc;
        }
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          float acc = 0;
          for (int t = -radius; t <= radius; ++t) acc += k[static_cast<std::size_t>(t + radius)] * tmp(reflect(y + t, h), xx);
          x(n, c, y, xx) = clamp01(acc);
        }
    }
}

void contrast(ImageBatch& x, double factor) {
  const auto f = static_cast<float>(factor);
  for (Index n = 0; n < x.batch(); ++n) {
    const float mean = x.sample_block(n).mean();
    for (Index c = 0; c < x.channels(); ++c)
      for (auto& v : x.plane_of(n, c)) v = clamp01((v - mean) * f + mean);
  }
}

void brightness(ImageBatch& x, double shift) {
  x.data() = (x.data().array() + static_cast<float>(shift)).cwiseMin(1.0f).cwiseMax(0.0f).matrix();
}

void pixelate(ImageBatch& x, double factor) {
  const Index h = x.height(), w = x.width();
  const Index ch = std::max<Index>(1, std::lround(static_cast<double>(h) * factor));
  const Index cw = std::max<Index>(1, std::lround(static_cast<double>(w) * factor));
  RowMatrix<float> acc(ch, cw);
  RowMatrix<float> cnt(ch, cw);
  for (Index n = 0; n < x.batch(); ++n)
    for (Index c = 0; c < x.channels(); ++c) {
      acc.setZero();
      cnt.setZero();
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          acc(y * ch / h, xx * cw / w) += x(n, c, y, xx);
          cnt(y * ch / h, xx * cw / w) += 1;
        }
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) x(n, c, y, xx) = acc(y * ch / h, xx * cw / w) / cnt(y * ch / h, xx * cw / w);
    }
}

}  // namespace

LabeledImageSet LabeledImageSet::subset(std::span<const Index> indices) const {
  LabeledImageSet out;
  out.images = images.select(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  out.class_count = class_count;
  out.seed = seed;
  return out;
}

LabeledImageSet LabeledImageSet::slice(Index begin, Index end) const {
  if (begin < 0 || end > size() || begin > end) throw ParameterError("LabeledImageSet::slice: bad range");
  std::vector<Index> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  return subset(idx);
}

LabeledImageSet generate_dataset(std::uint64_t seed, int class_count, Index samples, Index side) {
  if (class_count < 2) throw ParameterError("generate_dataset: class_count must be >= 2");
  if (samples < class_count) throw ParameterError("generate_dataset: samples must be >= class_count");
  if (side < 16) throw ParameterError("generate_dataset: side must be >= 16");

  LabeledImageSet out;
  out.class_count = class_count;
  out.seed = seed;
  out.images = ImageBatch(samples, 3, side, side);
  out.labels.resize(static_cast<std::size_t>(samples));
  for (Index i = 0; i < samples; ++i) out.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % class_count);
  auto order_gen = keyed_generator(seed, Stream::dataset, ~0ULL);
  std::shuffle(out.labels.begin(), out.labels.end(), order_gen);

  constexpr double pi = std::numbers::pi;
  const double spacing = pi / class_count;
  for (Index i = 0; i < samples; ++i) {
    auto gen = keyed_generator(seed, Stream::dataset, i);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int label = out.labels[static_cast<std::size_t>(i)];
    const double theta = label * spacing + (u(gen) - 0.5) * 0.5 * spacing;
    const double period = 4.0 + 2.0 * u(gen);
    const double phase = 2.0 * pi * u(gen);
    const double amplitude = 0.25 + 0.15 * u(gen);
    const double base = 0.35 + 0.3 * u(gen);
    double tint[3];
    for (double& t : tint) t = 0.6 + 0.4 * u(gen);
    const double kx = std::cos(theta) * 2.0 * pi / period;
    const double ky = std::sin(theta) * 2.0 * pi / period;
    for (Index y = 0; y < side; ++y)
      for (Index x = 0; x < side; ++x) {
        const double wave = std::cos(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
        for (Index c = 0; c < 3; ++c) {
          const double v = base + amplitude * tint[c] * wave + 0.02 * normal(gen);
          out.images(i, c, y, x) = clamp01(static_cast<float>(v));
        }
      }
  }
  return out;
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::blur: return "blur";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::pixelate: return "pixelate";
  }
  return "?";
}

CorruptionKind parse_corruption(std::string_view name) {
  for (auto k : all_corruptions())
    if (to_string(k) == name) return k;
  throw ParameterError("unknown corruption '" + std::string(name) + "'");
}

std::vector<CorruptionKind> all_corruptions() {
  return {CorruptionKind::gaussian_noise, CorruptionKind::blur, CorruptionKind::contrast,
          CorruptionKind::brightness, CorruptionKind::pixelate};
}

ImageBatch apply_corruption(const ImageBatch& batch, CorruptionSpec spec, std::uint64_t seed) {
  check_severity(spec.severity);
  const auto s = sev_index(spec.severity);
  ImageBatch out = batch;
  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: add_noise(out, constants::kNoiseSigma[s], seed); break;
    case CorruptionKind::blur: blur(out, constants::kBlurSigma[s]); break;
    case CorruptionKind::contrast: contrast(out, constants::kContrastFactor[s]); break;
    case CorruptionKind::brightness: brightness(out, constants::kBrightnessShift[s]); break;
    case CorruptionKind::pixelate: pixelate(out, constants::kPixelateFactor[s]); break;
  }
  return out;
}

std::string_view to_string(ScheduleMode mode) {
  return mode == ScheduleMode::continual ? "continual" : "gradual";
}

ScheduleMode parse_schedule_mode(std::string_view name) {
  if (name == "continual") return ScheduleMode::continual;
  if (name == "gradual") return ScheduleMode::gradual;
  throw ParameterError("unknown schedule mode '" + std::string(name) + "'");
}

int DomainSchedule::total_batches() const {
  int total = 0;
  for (const auto& e : entries) total += e.batch_count;
  return total;
}

DomainSchedule build_schedule(ScheduleMode mode, const std::vector<CorruptionKind>& kinds, int batches_per_domain) {
  if (kinds.empty()) throw ParameterError("build_schedule: kinds must be non-empty");
  if (batches_per_domain < 1) throw ParameterError("build_schedule: batches_per_domain must be >= 1");
  DomainSchedule s;
  s.mode = mode;
  for (auto kind : kinds) {
    if (mode == ScheduleMode::continual) {
      s.entries.push_back({{kind, 5}, batches_per_domain});
    } else {
      for (int sev : {1, 2, 3, 4, 5, 4, 3, 2, 1}) s.entries.push_back({{kind, sev}, batches_per_domain});
    }
  }
  return s;
}

DomainSchedule build_schedule(std::string_view mode, const std::vector<CorruptionKind>& kinds,
                              int batches_per_domain) {
  return build_schedule(parse_schedule_mode(mode), kinds, batches_per_domain);
}

TestStream::TestStream(const LabeledImageSet& pool, DomainSchedule schedule, Index batch_size, std::uint64_t seed)
    : pool_(&pool), schedule_(std::move(schedule)), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ParameterError("TestStream: batch_size must be >= 1");
  if (pool.size() < 1) throw ParameterError("TestStream: empty pool");
}

std::optional<StreamBatch> TestStream::next() {
  while (domain_ < schedule_.entries.size() && batch_in_domain_ >= schedule_.entries[domain_].batch_count) {
    ++domain_;
    batch_in_domain_ = 0;
  }
  if (domain_ >= schedule_.entries.size()) return std::nullopt;
  if (batch_in_domain_ == 0) {
    order_.resize(static_cast<std::size_t>(pool_->size()));
    std::iota(order_.begin(), order_.end(), Index{0});
    auto gen = keyed_generator(seed_, Stream::test_order, domain_);
    std::shuffle(order_.begin(), order_.end(), gen);
  }
  std::vector<Index> idx(static_cast<std::size_t>(batch_size_));
  for (Index k = 0; k < batch_size_; ++k)
    idx[static_cast<std::size_t>(k)] =
        order_[static_cast<std::size_t>((batch_in_domain_ * batch_size_ + k) % pool_->size())];
  const auto clean = pool_->subset(idx);

  StreamBatch b;
  b.domain = domain_;
  b.index = global_;
  b.corruption = schedule_.entries[domain_].corruption;
  b.images = apply_corruption(clean.images, b.corruption, hash_key({seed_, global_}));
  b.labels = clean.labels;
  ++batch_in_domain_;
  ++global_;
  return b;
}

void save_dataset(const LabeledImageSet& data, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  const auto flat = data.images.to_nchw();
  io::write_floats(bin, flat);
  const auto& s = data.images.shape();
  nlohmann::json j;
  j["format"] = "gtta-dataset";
  j["shape"] = {s.batch, s.channels, s.height, s.width};
  j["dtype"] = "float32";
  j["layout"] = "NCHW";
  j["labels"] = data.labels;
  j["class_count"] = data.class_count;
  j["seed"] = data.seed;
  j["constants_version"] = constants::kCorruptionConstantsVersion;
  j["blob"] = bin.filename().string();
  io::write_json(side, j);
}

LabeledImageSet load_dataset(const std::filesystem::path& stem) {
  auto side = stem;
  side += ".json";
  const auto j = io::read_json(side);
  if (j.value("format", "") != "gtta-dataset" || j.value("dtype", "") != "float32")
    throw ParameterError(side.string() + ": not a float32 gtta dataset");
  if (j.at("constants_version").get<int>() != constants::kCorruptionConstantsVersion)
    throw ParameterError(side.string() + ": corruption constants version mismatch");
  const auto dims = j.at("shape").get<std::vector<Index>>();
  if (dims.size() != 4) throw ParameterError(side.string() + ": shape must have rank 4");
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  const auto flat = io::read_floats(stem.parent_path() / j.at("blob").get<std::string>());
  LabeledImageSet out;
  out.images = ImageBatch::from_nchw(shape, flat);
  out.labels = j.at("labels").get<std::vector<int>>();
  out.class_count = j.at("class_count").get<int>();
  out.seed = j.at("seed").get<std::uint64_t>();
  if (static_cast<Index>(out.labels.size()) != shape.batch) throw ParameterError(side.string() + ": label count mismatch");
  return out;
}

}  // namespace gtta
