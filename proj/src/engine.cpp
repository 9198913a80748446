#include "gtta/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gtta/io.hpp"
#include "gtta/rng.hpp"

namespace gtta {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::source: return "source";
    case Method::bn_variant: return "bn_variant";
    case Method::self_training_only: return "self_training_only";
    case Method::source_replay: return "source_replay";
    case Method::gtta_mix: return "gtta_mix";
    case Method::gtta_st: return "gtta_st";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::source, Method::bn_variant, Method::self_training_only, Method::source_replay,
                 Method::gtta_mix, Method::gtta_st})
    if (to_string(m) == name) return m;
  throw ConfigurationError("unknown method '" + std::string(name) + "'");
}

AdaptConfig AdaptConfig::defaults_for(Method method) {
  AdaptConfig c;
  c.method = method;
  switch (method) {
    case Method::source: c.bn = BNAdaptConfig::make(BnVariant::bn0); break;
    case Method::bn_variant: break;
    case Method::self_training_only:
    case Method::source_replay: c.st = SelfTrainingConfig{}; break;
    case Method::gtta_mix:
      c.mixup = MixupConfig{};
      c.st = SelfTrainingConfig{};
      break;
    case Method::gtta_st:
      c.style = StyleConfig{};
      c.st = SelfTrainingConfig{};
      break;
  }
  return c;
}

void AdaptConfig::validate() const {
  bn.validate();
  const auto fail = [&](const std::string& what) {
    throw ConfigurationError("method " + std::string(to_string(method)) + ": " + what);
  };
  const bool want_mix = method == Method::gtta_mix;
  const bool want_style = method == Method::gtta_st;
  const bool want_st = method == Method::self_training_only || method == Method::source_replay || want_mix || want_style;
  if (mixup.has_value() != want_mix) fail(want_mix ? "needs a mixup section" : "takes no mixup section");
  if (style.has_value() != want_style) fail(want_style ? "needs a style section" : "takes no style section");
  if (st.has_value() != want_st) fail(want_st ? "needs an st section" : "takes no st section");
  if (method == Method::source && bn.variant != BnVariant::bn0) fail("the unadapted baseline uses source statistics (bn0)");
  if (mixup) mixup->validate();
  if (style) {
    if (style->capacity < 1) fail("style.capacity must be >= 1");
    if (!(style->lambda_s >= 0.0)) fail("style.lambda_s must be >= 0");
    if (style->pretrain_iters < 0) fail("style.pretrain_iters must be >= 0");
    if (!(style->decoder_lr >= 0.0)) fail("style.decoder_lr must be >= 0");
  }
  if (st) {
    if (!(st->alpha_th >= 0.0 && st->alpha_th <= 1.0)) fail("st.alpha_th must lie in [0,1]");
    if (method == Method::self_training_only && !st->enabled) fail("self-training cannot be disabled here");
  }
  if (updates_per_batch < 1) fail("updates_per_batch must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
  if (batch_size_test < 1) fail("batch_size_test must be >= 1");
  if (batch_size_source < 1) fail("batch_size_source must be >= 1");
  if (!(source_fraction > 0.0 && source_fraction <= 1.0)) fail("source_fraction must lie in (0,1]");
  if (!(source_weight >= 0.0) || !(test_weight >= 0.0)) fail("loss weights must be >= 0");
  if (window != 0 && window < 2) fail("window must be 0 (batch mode) or >= 2");
}

bool AdaptConfig::performs_updates() const { return method != Method::source && method != Method::bn_variant; }

bool AdaptConfig::uses_source() const {
  return method == Method::source_replay || method == Method::gtta_mix || method == Method::gtta_st;
}

void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = nlohmann::json::object();
  j["method"] = to_string(c.method);
  j["bn"] = {{"variant", to_string(c.bn.variant)}, {"alpha", c.bn.alpha}};
  j["updates_per_batch"] = c.updates_per_batch;
  j["lr"] = c.lr;
  j["batch_size_test"] = c.batch_size_test;
  j["batch_size_source"] = c.batch_size_source;
  j["source_fraction"] = c.source_fraction;
  j["source_weight"] = c.source_weight;
  j["test_weight"] = c.test_weight;
  j["window"] = c.window;
  if (c.mixup) j["mixup"] = {{"lambda", c.mixup->lambda}, {"enabled", c.mixup->enabled}};
  if (c.style)
    j["style"] = {{"capacity", c.style->capacity},
                  {"lambda_s", c.style->lambda_s},
                  {"pretrain_iters", c.style->pretrain_iters},
                  {"decoder_lr", c.style->decoder_lr}};
  if (c.st) j["st"] = {{"alpha_th", c.st->alpha_th}, {"filtering", c.st->filtering}, {"enabled", c.st->enabled}};
}

namespace {

const nlohmann::json* section(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nullptr;
  if (!it->is_object()) throw ConfigurationError(std::string("'") + key + "' must be an object");
  return &*it;
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void from_json(const nlohmann::json& j, AdaptConfig& c) {
  if (!j.is_object()) throw ConfigurationError("adapt config must be a JSON object");
  const auto method = parse_method(j.at("method").get<std::string>());
  c = AdaptConfig::defaults_for(method);
  // Explicit sections replace the defaults; a missing section keeps the method default.
  if (const auto* bn = section(j, "bn")) {
    const auto variant = parse_bn_variant(bn->value("variant", std::string(to_string(c.bn.variant))));
    std::optional<double> alpha;
    if (bn->contains("alpha")) alpha = bn->at("alpha").get<double>();
    if (alpha && variant != BnVariant::bn_ema) {
      c.bn = BNAdaptConfig{variant, *alpha};
      c.bn.validate();
    } else {
      c.bn = BNAdaptConfig::make(variant, alpha);
    }
  }
  read_opt(j, "updates_per_batch", c.updates_per_batch);
  read_opt(j, "lr", c.lr);
  read_opt(j, "batch_size_test", c.batch_size_test);
  read_opt(j, "batch_size_source", c.batch_size_source);
  read_opt(j, "source_fraction", c.source_fraction);
  read_opt(j, "source_weight", c.source_weight);
  read_opt(j, "test_weight", c.test_weight);
  read_opt(j, "window", c.window);
  if (j.contains("mixup")) {
    c.mixup.reset();
    if (const auto* m = section(j, "mixup")) {
      MixupConfig mc;
      read_opt(*m, "lambda", mc.lambda);
      read_opt(*m, "enabled", mc.enabled);
      c.mixup = mc;
    }
  }
  if (j.contains("style")) {
    c.style.reset();
    if (const auto* s = section(j, "style")) {
      StyleConfig sc;
      read_opt(*s, "capacity", sc.capacity);
      read_opt(*s, "lambda_s", sc.lambda_s);
      read_opt(*s, "pretrain_iters", sc.pretrain_iters);
      read_opt(*s, "decoder_lr", sc.decoder_lr);
      c.style = sc;
    }
  }
  if (j.contains("st")) {
    c.st.reset();
    if (const auto* s = section(j, "st")) {
      SelfTrainingConfig sc;
      read_opt(*s, "alpha_th", sc.alpha_th);
      read_opt(*s, "filtering", sc.filtering);
      read_opt(*s, "enabled", sc.enabled);
      c.st = sc;
    }
  }
  c.validate();
}

void apply_override(AdaptConfig& c, std::string_view key, const nlohmann::json& value) {
  auto j = nlohmann::json(c);
  const auto dot = key.find('.');
  const std::string head(key.substr(0, dot));
  if (dot == std::string_view::npos) {
    if (head == "method" || !j.contains(head))
      throw ConfigurationError("unknown or non-overridable key '" + std::string(key) + "'");
    j[head] = value;
  } else {
    const std::string tail(key.substr(dot + 1));
    if (!j.contains(head) || !j[head].is_object())
      throw ConfigurationError("method " + std::string(to_string(c.method)) + " has no '" + head + "' section");
    if (!j[head].contains(tail)) throw ConfigurationError("unknown key '" + std::string(key) + "'");
    j[head][tail] = value;
    // Changing a fixed BN variant must not drag along its old alpha.
    if (head == "bn" && tail == "variant") j["bn"].erase("alpha");
  }
  c = j.get<AdaptConfig>();
}

SourceReservoir::SourceReservoir(const LabeledImageSet& source, double fraction, std::uint64_t seed)
    : fraction_(fraction), seed_(seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigurationError("source_fraction must lie in (0,1]");
  if (source.size() == 0) throw ConfigurationError("source reservoir: empty source set");
  const auto keep = std::max<Index>(1, static_cast<Index>(std::llround(fraction * static_cast<double>(source.size()))));
  if (keep == source.size()) {
    data_ = source;
    return;
  }
  std::vector<Index> idx(static_cast<std::size_t>(source.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto gen = keyed_generator(seed, Stream::reservoir);
  std::shuffle(idx.begin(), idx.end(), gen);
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  data_ = source.subset(idx);
}

LabeledImageSet SourceReservoir::sample(Index n, std::uint64_t step) const {
  if (data_.size() == 0) throw ConfigurationError("sample_source: empty reservoir");
  if (n < 1) throw ParameterError("sample_source: n must be >= 1");
  auto gen = keyed_generator(seed_, Stream::source_sample, step);
  std::uniform_int_distribution<Index> pick(0, data_.size() - 1);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (auto& i : idx) i = pick(gen);
  return data_.subset(idx);
}

LabeledImageSet sample_source(const SourceReservoir& reservoir, Index n, std::uint64_t step_seed) {
  return reservoir.sample(n, step_seed);
}

SlidingBuffer::SlidingBuffer(Index capacity) : capacity_(capacity) {
  if (capacity < 2) throw ConfigurationError("sliding buffer capacity must be >= 2");
}

bool SlidingBuffer::push(const ImageBatch& sample) {
  if (sample.batch() != 1) throw ParameterError("SlidingBuffer::push: expected a single sample");
  if (!samples_.empty() && samples_.front().shape() != sample.shape())
    throw ParameterError("SlidingBuffer::push: sample shape changed");
  if (size() == capacity_) samples_.pop_front();
  samples_.push_back(sample);
  if (++since_update_ == capacity_) {
    since_update_ = 0;
    return true;
  }
  return false;
}

ImageBatch SlidingBuffer::contents(bool pad) const {
  if (samples_.empty()) throw ParameterError("SlidingBuffer::contents: buffer is empty");
  const Index n = pad ? capacity_ : size();
  const auto& first = samples_.front();
  ImageBatch out(Shape{n, first.channels(), first.height(), first.width()});
  for (Index i = 0; i < n; ++i) out.set_sample(i, samples_[static_cast<std::size_t>(i % size())], 0);
  return out;
}

void to_json(nlohmann::json& j, const StepReport& r) {
  j = {{"updated", r.updated},
       {"updates", r.updates},
       {"source_loss", r.source_loss},
       {"test_loss", r.test_loss},
       {"test_loss_skipped", r.test_loss_skipped},
       {"kept_fraction", r.kept_fraction},
       {"gamma", r.gamma}};
  if (r.decoder_loss) j["decoder_loss"] = *r.decoder_loss;
}

Adapter::Adapter(const ClassifierF& source_model, AdaptConfig config, const LabeledImageSet* source_data,
                 std::optional<StyleNetwork> style, std::uint64_t seed)
    : model_(source_model), config_(std::move(config)), style_(std::move(style)), seed_(seed) {
  config_.validate();
  if (config_.uses_source()) {
    if (!source_data) throw ConfigurationError("method " + std::string(to_string(config_.method)) + " needs source data");
    reservoir_.emplace(*source_data, config_.source_fraction, seed);
  }
  if (config_.method == Method::gtta_st) {
    if (!style_) throw ConfigurationError("gtta_st needs a pretrained style network");
    if (!style_->encoder.frozen()) throw ConfigurationError("gtta_st: style encoder must be frozen");
    memory_.emplace(config_.style->capacity);
  }
  if (config_.st) threshold_.alpha_th = config_.st->alpha_th;
  model_.set_bn_mode(config_.bn.mode());
  model_.reset_ema();
}

std::vector<int> Adapter::predict(const ImageBatch& batch) {
  if (batch.empty()) throw ParameterError("predict: empty batch");
  const nn::ForwardOptions opts{.source_training = false, .commit_ema = true};
  return argmax_rows(model_.forward(batch, opts));
}

ImageBatch Adapter::stylized_source(const LabeledImageSet& src, const ImageBatch& test, int rep, StepReport& report) {
  auto& enc = style_->encoder;
  auto& dec = style_->decoder;
  const auto test_styles = style_moments(enc.forward(test));
  const Index n = src.size();
  // First half takes the current test style, the rest a style drawn from the memory.
  const Index current = memory_->empty() ? n : (n + 1) / 2;
  auto gen = keyed_generator(seed_, Stream::style, step_, static_cast<std::uint64_t>(rep));
  std::uniform_int_distribution<std::size_t> pick(0, test_styles.size() - 1);
  std::vector<StyleMoments<float>> styles;
  styles.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    if (j < current) {
      styles.push_back(test_styles[pick(gen)]);
    } else {
      styles.push_back(memory_->sample(hash_key({seed_, step_, static_cast<std::uint64_t>(rep),
                                                 static_cast<std::uint64_t>(j)})));
    }
  }
  const std::span<const StyleMoments<float>> span(styles);
  const auto loss = train_decoder_step(dec, decoder_optimizer_, enc, src.images, span, config_.style->decoder_lr,
                                       config_.style->lambda_s);
  report.decoder_loss = report.decoder_loss.value_or(0.0) + loss.total;
  return stylize(src.images, span, enc, dec);
}

StepReport Adapter::adapt_step(const ImageBatch& test_batch) {
  if (test_batch.empty()) throw ParameterError("adapt_step: empty test batch");
  StepReport report;
  if (!config_.performs_updates()) {
    ++step_;
    return report;
  }
  const nn::ForwardOptions opts{.source_training = false, .commit_ema = false};
  const int reps = config_.updates_per_batch;
  Index kept_total = 0;
  int source_terms = 0, test_terms = 0;
  bool any_skipped = false;
  for (int rep = 0; rep < reps; ++rep) {
    model_.zero_grad();
    if (config_.uses_source()) {
      const auto src = reservoir_->sample(config_.batch_size_source,
                                          hash_key({step_, static_cast<std::uint64_t>(rep)}));
      ImageBatch x;
      if (config_.method == Method::gtta_mix && config_.mixup->enabled) {
        x = build_mixed_batch(src.images, std::span<const int>(src.labels), test_batch, model_, *config_.mixup).images;
      } else if (config_.method == Method::gtta_st) {
        x = stylized_source(src, test_batch, rep, report);
      } else {
        x = src.images;
      }
      const auto probs = softmax_rows<float>(model_.forward(x, opts));
      auto ce = ce_loss_source<float>(src.labels, probs);
      report.source_loss += ce.value;
      ++source_terms;
      if (!std::isfinite(ce.value)) throw TrainingError("adapt_step: non-finite source loss at step " + std::to_string(step_));
      ce.grad_logits *= static_cast<float>(config_.source_weight);
      model_.backward(ce.grad_logits);
    }
    if (config_.st && config_.st->enabled) {
      const auto probs = softmax_rows<float>(model_.forward(test_batch, opts));
      // The threshold sees each test batch once, on its first pass.
      if (rep == 0) threshold_ = update_threshold(threshold_, probs);
      auto pl = pseudo_labels(probs);
      if (config_.st->filtering) pl = filter_by_confidence(std::move(pl), std::clamp(threshold_.gamma, 0.0, 1.0));
      kept_total += pl.kept_count();
      auto ce = ce_loss_test(pl, probs);
      if (ce.skipped) {
        any_skipped = true;
      } else {
        if (!std::isfinite(ce.value)) throw TrainingError("adapt_step: non-finite test loss at step " + std::to_string(step_));
        report.test_loss += ce.value;
        ++test_terms;
        ce.grad_logits *= static_cast<float>(config_.test_weight);
        model_.backward(ce.grad_logits);
      }
    }
    apply_update(model_, optimizer_, config_.lr);
    ++report.updates;
  }
  if (source_terms) report.source_loss /= source_terms;
  if (test_terms) report.test_loss /= test_terms;
  if (report.decoder_loss) *report.decoder_loss /= reps;
  report.test_loss_skipped = any_skipped;
  if (config_.st && config_.st->enabled)
    report.kept_fraction = static_cast<double>(kept_total) / static_cast<double>(reps * test_batch.batch());
  report.gamma = threshold_.gamma;
  report.updated = true;
  if (memory_) {
    auto gen = keyed_generator(seed_, Stream::memory, 0xF00D, step_);
    std::uniform_int_distribution<Index> pick(0, test_batch.batch() - 1);
    memory_->push(style_moments(style_->encoder.forward(test_batch), pick(gen)));
  }
  ++step_;
  return report;
}

StepReport adapt_step(Adapter& adapter, const ImageBatch& test_batch) { return adapter.adapt_step(test_batch); }

double SequenceReport::mean_error() const {
  if (domains.empty()) return 0.0;
  double total = 0.0;
  for (const auto& d : domains) total += d.error_rate();
  return total / static_cast<double>(domains.size());
}

void to_json(nlohmann::json& j, const SequenceReport& r) {
  auto domains = nlohmann::json::array();
  for (const auto& d : r.domains)
    domains.push_back({{"index", d.index},
                       {"kind", to_string(d.corruption.kind)},
                       {"severity", d.corruption.severity},
                       {"samples", d.samples},
                       {"errors", d.errors},
                       {"error", d.error_rate()}});
  j = {{"domains", domains},
       {"mean_error", r.mean_error()},
       {"batch_errors", r.batch_errors},
       {"steps", r.steps},
       {"initial_checksum", r.initial_checksum},
       {"domain_end_checksums", r.domain_end_checksums},
       {"updates", r.updates},
       {"partial_buffer_predictions", r.partial_buffer_predictions},
       {"stream_shorter_than_buffer", r.stream_shorter_than_buffer}};
}

namespace {

std::string checksum_hex(ClassifierF& model) { return io::hex64(model.checksum()); }

struct DomainTracker {
  SequenceReport& report;
  ClassifierF& model;
  ProgressFn progress;
  void* ctx;

  void enter(const StreamBatch& b) {
    if (!report.domains.empty() && report.domains.back().index == b.domain) return;
    close();
    report.domains.push_back(DomainResult{b.domain, b.corruption, 0, 0});
  }
  void close() {
    if (report.domains.size() == report.domain_end_checksums.size()) return;
    report.domain_end_checksums.push_back(checksum_hex(model));
    if (progress) progress(report.domains.back(), ctx);
  }
};

Index count_errors(const std::vector<int>& pred, std::span<const int> labels) {
  Index e = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) e += pred[i] != labels[i];
  return e;
}

}  // namespace

SequenceReport run_sequence(Adapter& adapter, TestStream& stream, ProgressFn progress, void* progress_ctx) {
  SequenceReport report;
  report.initial_checksum = checksum_hex(adapter.model());
  DomainTracker tracker{report, adapter.model(), progress, progress_ctx};
  while (auto b = stream.next()) {
    tracker.enter(*b);
    const auto pred = adapter.predict(b->images);
    const Index errors = count_errors(pred, b->labels);
    auto& d = report.domains.back();
    d.samples += static_cast<Index>(pred.size());
    d.errors += errors;
    report.batch_errors.push_back(100.0 * static_cast<double>(errors) / static_cast<double>(pred.size()));
    auto step = adapter.adapt_step(b->images);
    report.updates += step.updates;
    report.steps.push_back(std::move(step));
  }
  tracker.close();
  return report;
}

SequenceReport run_sequence(const ClassifierF& source_model, const LabeledImageSet& source_data,
                            const LabeledImageSet& test_pool, const DomainSchedule& schedule,
                            const AdaptConfig& config, std::uint64_t seed, const std::optional<StyleNetwork>& style) {
  Adapter adapter(source_model, config, &source_data, style, seed);
  TestStream stream(test_pool, schedule, config.batch_size_test, seed);
  if (config.window > 0) return sliding_window_adapt(adapter, stream, config.window);
  return run_sequence(adapter, stream);
}

SequenceReport sliding_window_adapt(Adapter& adapter, TestStream& stream, Index capacity, ProgressFn progress,
                                    void* progress_ctx) {
  SlidingBuffer buffer(capacity);
  SequenceReport report;
  report.initial_checksum = checksum_hex(adapter.model());
  DomainTracker tracker{report, adapter.model(), progress, progress_ctx};
  Index seen = 0;
  while (auto b = stream.next()) {
    tracker.enter(*b);
    Index batch_errors = 0;
    for (Index i = 0; i < b->images.batch(); ++i) {
      const bool fire = buffer.push(b->images.sample(i));
      if (!buffer.full()) ++report.partial_buffer_predictions;
      const auto window = buffer.contents(true);
      const auto pred = adapter.predict(window);
      // The newest sample sits at size()-1 whether or not the buffer is padded.
      const bool wrong = pred[static_cast<std::size_t>(buffer.size() - 1)] != b->labels[static_cast<std::size_t>(i)];
      batch_errors += wrong;
      ++seen;
      if (fire) {
        auto step = adapter.adapt_step(buffer.contents(false));
        report.updates += step.updates;
        report.steps.push_back(std::move(step));
      }
    }
    auto& d = report.domains.back();
    d.samples += b->images.batch();
    d.errors += batch_errors;
    report.batch_errors.push_back(100.0 * static_cast<double>(batch_errors) / static_cast<double>(b->images.batch()));
  }
  tracker.close();
  report.stream_shorter_than_buffer = seen > 0 && seen < capacity;
  return report;
}

}  // namespace gtta
