#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gtta/bn_adapt.hpp"
#include "gtta/errors.hpp"
#include "gtta/model.hpp"
#include "gtta/rng.hpp"
#include "gtta/tensor.hpp"

namespace gtta {

/// Channel moments at every encoder tap, for one image (or one class region of it).
template <typename Scalar>
struct StyleMoments {
  std::vector<ChannelStats<Scalar>> layers;
  std::optional<int> class_id;

  const ChannelStats<Scalar>& top() const { return layers.back(); }
  bool operator==(const StyleMoments&) const = default;
};

/// Spatial moments of sample n, one entry per channel.
template <typename Scalar>
ChannelStats<Scalar> sample_moments(const Tensor<Scalar>& f, Index n) {
  const auto block = f.sample_block(n);
  const auto count = static_cast<Scalar>(f.plane());
  ChannelStats<Scalar> s;
  s.mean = block.rowwise().sum() / count;
  s.std = ((block.colwise() - s.mean).array().square().rowwise().sum() / count).sqrt().matrix();
  floor_std(s);
  return s;
}

template <typename Scalar>
StyleMoments<Scalar> style_moments(const std::vector<Tensor<Scalar>>& taps, Index n) {
  StyleMoments<Scalar> m;
  for (const auto& t : taps) m.layers.push_back(sample_moments(t, n));
  return m;
}

template <typename Scalar>
std::vector<StyleMoments<Scalar>> style_moments(const std::vector<Tensor<Scalar>>& taps) {
  std::vector<StyleMoments<Scalar>> out;
  for (Index n = 0; n < taps.front().batch(); ++n) out.push_back(style_moments(taps, n));
  return out;
}

namespace detail {
template <typename T>
const T& broadcast_at(std::span<const T> items, Index n) {
  return items.size() == 1 ? items[0] : items[static_cast<std::size_t>(n)];
}
template <typename T>
void check_broadcast(std::span<const T> items, Index batch, const char* what) {
  if (items.empty() || (items.size() != 1 && static_cast<Index>(items.size()) != batch))
    throw ParameterError(std::string(what) + ": need one style or one per sample");
}
}  // namespace detail

/// Renormalizes each content sample to the channel-wise mean/std of its style:
///   out = sigma_s * (z - mu(z)) / sigma(z) + mu_s
/// `styles` holds either one entry (shared) or one per sample.
template <typename Scalar>
Tensor<Scalar> adain(const Tensor<Scalar>& content, std::span<const ChannelStats<Scalar>> styles) {
  detail::check_broadcast(styles, content.batch(), "adain");
  Tensor<Scalar> out(content.shape());
  for (Index n = 0; n < content.batch(); ++n) {
    const auto& style = detail::broadcast_at(styles, n);
    if (style.channels() != content.channels()) throw ParameterError("adain: channel count mismatch");
    const auto own = sample_moments(content, n);
    const Vector<Scalar> scale = style.std.array() / own.std.array();
    out.sample_block(n) =
        ((content.sample_block(n).colwise() - own.mean).array().colwise() * scale.array()).colwise() +
        style.mean.array();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> adain(const Tensor<Scalar>& content, const ChannelStats<Scalar>& style) {
  return adain(content, std::span<const ChannelStats<Scalar>>(&style, 1));
}

using LabelMask = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline constexpr int kIgnoreLabel = -1;

/// Nearest-neighbour resize; label values are never blended.
inline LabelMask resize_mask_nearest(const LabelMask& mask, Index height, Index width) {
  LabelMask out(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) out(y, x) = mask(y * mask.rows() / height, x * mask.cols() / width);
  return out;
}

/// Per-class channel moments of sample n over exactly the positions carrying that class.
/// Absent classes come back as nullopt; ignore-labelled positions contribute nowhere.
template <typename Scalar>
std::vector<std::optional<ChannelStats<Scalar>>> class_conditional_moments(const Tensor<Scalar>& features, Index n,
                                                                           const LabelMask& mask, int class_count) {
  if (mask.rows() != features.height() || mask.cols() != features.width())
    throw ParameterError("class_conditional_moments: mask size must equal feature size");
  const Index C = features.channels();
  std::vector<Vector<double>> sum(static_cast<std::size_t>(class_count), Vector<double>::Zero(C));
  std::vector<Vector<double>> sq(static_cast<std::size_t>(class_count), Vector<double>::Zero(C));
  std::vector<Index> count(static_cast<std::size_t>(class_count), 0);
  const auto block = features.sample_block(n);
  for (Index p = 0; p < features.plane(); ++p) {
    const int k = mask.data()[p];
    if (k == kIgnoreLabel) continue;
    if (k < 0 || k >= class_count) throw ParameterError("class_conditional_moments: label out of range");
    const auto kk = static_cast<std::size_t>(k);
    sum[kk] += block.col(p).template cast<double>();
    ++count[kk];
  }
  std::vector<std::optional<ChannelStats<Scalar>>> out(static_cast<std::size_t>(class_count));
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (count[k] == 0) continue;
    const Vector<double> mean = sum[k] / static_cast<double>(count[k]);
    for (Index p = 0; p < features.plane(); ++p)
      if (mask.data()[p] == static_cast<int>(k)) sq[k] += (block.col(p).template cast<double>() - mean).cwiseAbs2();
    ChannelStats<Scalar> s;
    s.mean = mean.cast<Scalar>();
    s.std = (sq[k] / static_cast<double>(count[k])).cwiseSqrt().cast<Scalar>();
    floor_std(s);
    out[k] = std::move(s);
  }
  return out;
}

/// AdaIN applied region by region: positions of class k in the content mask are renormalized
/// to the style moments of class k. Regions without a matching style are left untouched.
template <typename Scalar>
Tensor<Scalar> class_conditional_adain(const Tensor<Scalar>& content, Index n, const LabelMask& content_mask,
                                       const std::vector<std::optional<ChannelStats<Scalar>>>& class_styles) {
  const int class_count = static_cast<int>(class_styles.size());
  const auto own = class_conditional_moments(content, n, content_mask, class_count);
  Tensor<Scalar> out = content.sample(n);
  for (Index p = 0; p < content.plane(); ++p) {
    const int k = content_mask.data()[p];
    if (k == kIgnoreLabel || !own[static_cast<std::size_t>(k)] || !class_styles[static_cast<std::size_t>(k)]) continue;
    const auto& c = *own[static_cast<std::size_t>(k)];
    const auto& s = *class_styles[static_cast<std::size_t>(k)];
    out.data().col(p) = ((out.data().col(p) - c.mean).array() / c.std.array() * s.std.array() + s.mean.array()).matrix();
  }
  return out;
}

/// Decoder objective, split into its parts:
///   total = lambda_s * style + content
///   style = sum_l MSE(mu_l(x~), mu_l(style)) + MSE(sigma_l(x~), sigma_l(style))
///   content = MSE(E(x~), z~)
/// MSE averages over (sample, channel) for moments and over all elements for content.
template <typename Scalar>
struct DecoderLoss {
  double total = 0.0;
  double style = 0.0;
  double content = 0.0;
  std::vector<double> mean_terms, std_terms;
  /// d(total)/d(tap), filled when gradients were requested.
  std::vector<Tensor<Scalar>> tap_grads;
};

template <typename Scalar>
DecoderLoss<Scalar> decoder_loss_from_taps(const std::vector<Tensor<Scalar>>& taps,
                                           std::span<const StyleMoments<Scalar>> styles, const Tensor<Scalar>& target,
                                           double lambda_s, bool with_grad) {
  if (taps.empty()) throw ParameterError("decoder_loss: no encoder taps");
  const Index N = taps.front().batch();
  detail::check_broadcast(styles, N, "decoder_loss");
  if (target.shape() != taps.back().shape()) throw ParameterError("decoder_loss: target embedding shape mismatch");
  DecoderLoss<Scalar> out;
  if (with_grad) out.tap_grads.resize(taps.size());
  for (std::size_t l = 0; l < taps.size(); ++l) {
    const auto& f = taps[l];
    const Index C = f.channels(), hw = f.plane();
    const double denom = static_cast<double>(N * C);
    double mse_mu = 0.0, mse_sigma = 0.0;
    if (with_grad) out.tap_grads[l] = Tensor<Scalar>(f.shape());
    for (Index n = 0; n < N; ++n) {
      const auto& sl = detail::broadcast_at(styles, n).layers.at(l);
      if (sl.channels() != C) throw ParameterError("decoder_loss: style channel mismatch");
      const auto own = sample_moments(f, n);
      for (Index c = 0; c < C; ++c) {
        const double dmu = static_cast<double>(own.mean(c)) - static_cast<double>(sl.mean(c));
        const double dsig = static_cast<double>(own.std(c)) - static_cast<double>(sl.std(c));
        mse_mu += dmu * dmu;
        mse_sigma += dsig * dsig;
        if (!with_grad) continue;
        auto g = out.tap_grads[l].plane_of(n, c).array();
        g += static_cast<Scalar>(lambda_s * 2.0 * dmu / (denom * static_cast<double>(hw)));
        if (own.std(c) > static_cast<Scalar>(kStdFloor)) {
          const double k = lambda_s * 2.0 * dsig / (denom * static_cast<double>(hw) * static_cast<double>(own.std(c)));
          g += static_cast<Scalar>(k) * (f.plane_of(n, c).array() - own.mean(c));
        }
      }
    }
    out.mean_terms.push_back(mse_mu / denom);
    out.std_terms.push_back(mse_sigma / denom);
    out.style += (mse_mu + mse_sigma) / denom;
  }
  const auto& top = taps.back();
  const auto diff = (top.data() - target.data()).template cast<double>();
  const double count = static_cast<double>(diff.size());
  out.content = diff.squaredNorm() / count;
  if (with_grad) out.tap_grads.back().data() += (top.data() - target.data()) * static_cast<Scalar>(2.0 / count);
  out.total = lambda_s * out.style + out.content;
  return out;
}

/// Loss of an already transferred image batch: runs the encoder on it and compares with the
/// styles and the target embedding z~.
template <typename Scalar>
DecoderLoss<Scalar> decoder_loss(const Tensor<Scalar>& transferred, std::span<const StyleMoments<Scalar>> styles,
                                 const Tensor<Scalar>& target, StyleEncoder<Scalar>& encoder, double lambda_s) {
  return decoder_loss_from_taps(encoder.forward(transferred), styles, target, lambda_s, false);
}

/// Style given as an image: its moments are measured with the same encoder.
template <typename Scalar>
DecoderLoss<Scalar> decoder_loss(const Tensor<Scalar>& transferred, const Tensor<Scalar>& style_images,
                                 const Tensor<Scalar>& target, StyleEncoder<Scalar>& encoder, double lambda_s) {
  const auto styles = style_moments(encoder.forward(style_images));
  return decoder_loss(transferred, std::span<const StyleMoments<Scalar>>(styles), target, encoder, lambda_s);
}

template <typename Scalar>
std::vector<ChannelStats<Scalar>> top_layers(std::span<const StyleMoments<Scalar>> styles) {
  std::vector<ChannelStats<Scalar>> out;
  for (const auto& s : styles) out.push_back(s.top());
  return out;
}

/// D(AdaIN(E(x), style)), clamped to [0,1].
template <typename Scalar>
Tensor<Scalar> stylize(const Tensor<Scalar>& images, std::span<const StyleMoments<Scalar>> styles,
                       StyleEncoder<Scalar>& encoder, StyleDecoder<Scalar>& decoder) {
  detail::check_broadcast(styles, images.batch(), "stylize");
  const auto tops = top_layers(styles);
  const auto z = adain(encoder.forward(images).back(), std::span<const ChannelStats<Scalar>>(tops));
  Tensor<Scalar> out = decoder.forward(z);
  out.data() = out.data().cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
  return out;
}

/// One Adam step of the decoder on the decoder objective. The encoder must be frozen and
/// is never modified. A non-finite loss rejects the step.
template <typename Scalar>
DecoderLoss<Scalar> train_decoder_step(StyleDecoder<Scalar>& decoder, Adam<Scalar>& optimizer,
                                       StyleEncoder<Scalar>& encoder, const Tensor<Scalar>& source,
                                       std::span<const StyleMoments<Scalar>> styles, double lr, double lambda_s) {
  if (!encoder.frozen()) throw ParameterError("train_decoder_step: encoder must be frozen");
  detail::check_broadcast(styles, source.batch(), "train_decoder_step");
  const auto tops = top_layers(styles);
  const auto target = adain(encoder.forward(source).back(), std::span<const ChannelStats<Scalar>>(tops));
  decoder.zero_grad();
  const auto transferred = decoder.forward(target);
  const auto taps = encoder.forward(transferred);
  auto loss = decoder_loss_from_taps(taps, styles, target, lambda_s, true);
  if (!std::isfinite(loss.total)) throw TrainingError("train_decoder_step: non-finite decoder loss");
  decoder.backward(encoder.backward(loss.tap_grads));
  optimizer.step(decoder.params(), lr);
  return loss;
}

/// Bounded FIFO of observed styles with uniform sampling.
template <typename Scalar>
class StyleMemory {
 public:
  explicit StyleMemory(std::size_t capacity = 16) : capacity_(capacity) {
    if (capacity == 0) throw ParameterError("StyleMemory: capacity must be >= 1");
  }

  void push(StyleMoments<Scalar> style) {
    if (style.layers.empty()) throw ParameterError("StyleMemory::push: empty style");
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(style));
    ++pushes_;
  }

  /// Uniform draw keyed by seed.
  const StyleMoments<Scalar>& sample(std::uint64_t seed) {
    if (entries_.empty()) throw EmptyMemoryError("StyleMemory::sample: memory is empty");
    auto gen = keyed_generator(seed, Stream::memory);
    std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
    ++samples_;
    return entries_[pick(gen)];
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  std::uint64_t pushes() const { return pushes_; }
  std::uint64_t samples() const { return samples_; }
  const std::deque<StyleMoments<Scalar>>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<StyleMoments<Scalar>> entries_;
  std::uint64_t pushes_ = 0, samples_ = 0;
};

template <typename Scalar>
StyleMemory<Scalar> memory_push(StyleMemory<Scalar> memory, StyleMoments<Scalar> style) {
  memory.push(std::move(style));
  return memory;
}

template <typename Scalar>
StyleMoments<Scalar> memory_sample(StyleMemory<Scalar>& memory, std::uint64_t seed) {
  return memory.sample(seed);
}

struct DecoderTrainConfig {
  int iterations = 1000;
  double lr = 1e-3;
  int batch_size = 16;
  double lambda_s = 10.0;
  std::uint64_t seed = 0;
  bool operator==(const DecoderTrainConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecoderTrainConfig, iterations, lr, batch_size, lambda_s, seed)

/// Source-domain decoder pre-training: each content image is transferred into the style of
/// another randomly drawn source image.
template <typename Scalar>
StyleDecoder<Scalar> pretrain_decoder(StyleEncoder<Scalar>& encoder, const Tensor<Scalar>& source,
                                      const DecoderTrainConfig& config, std::vector<double>* losses = nullptr) {
  StyleDecoder<Scalar> decoder(encoder.arch(), config.seed);
  Adam<Scalar> adam;
  const Index bs = std::min<Index>(config.batch_size, source.batch());
  std::vector<Index> content(static_cast<std::size_t>(bs)), style(static_cast<std::size_t>(bs));
  for (int it = 0; it < config.iterations; ++it) {
    auto gen = keyed_generator(config.seed, Stream::style, 0xDEC0DE, it);
    std::uniform_int_distribution<Index> pick(0, source.batch() - 1);
    for (auto& i : content) i = pick(gen);
    for (auto& i : style) i = pick(gen);
    const auto styles = style_moments(encoder.forward(source.select(style)));
    const auto loss = train_decoder_step(decoder, adam, encoder, source.select(content),
                                         std::span<const StyleMoments<Scalar>>(styles), config.lr, config.lambda_s);
    if (losses) losses->push_back(loss.total);
  }
  return decoder;
}

}  // namespace gtta
