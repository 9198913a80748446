#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtta/bn_adapt.hpp"
#include "gtta/io.hpp"
#include "gtta/nn/layers.hpp"
#include "gtta/rng.hpp"
#include "gtta/tensor.hpp"
#include "gtta/toy_data.hpp"

namespace gtta {

struct ArchConfig {
  int in_channels = 3;
  int side = 16;
  int class_count = 8;
  /// Output channels of each conv -> BN -> ReLU -> pool block.
  std::vector<int> widths{16, 32, 64};

  void validate() const {
    if (widths.empty()) throw ParameterError("ArchConfig: need at least one block");
    if (class_count < 2) throw ParameterError("ArchConfig: class_count must be >= 2");
    if (side % (1 << widths.size())) throw ParameterError("ArchConfig: side not divisible by 2^blocks");
  }
  int head_side() const { return side >> widths.size(); }
  bool operator==(const ArchConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArchConfig, in_channels, side, class_count, widths)

template <typename Scalar>
std::uint64_t checksum_params(const std::vector<nn::Param<Scalar>*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) h = io::fnv1a(p->value.data(), sizeof(Scalar) * static_cast<std::size_t>(p->value.size()), h);
  return h;
}

/// Conv/BN/ReLU/pool blocks followed by a linear head.
template <typename Scalar>
class Classifier {
 public:
  using scalar_type = Scalar;
  using forward_options = nn::ForwardOptions;

  Classifier(ArchConfig arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed) {
    arch_.validate();
    auto gen = keyed_generator(seed, Stream::init);
    int in = arch_.in_channels;
    for (std::size_t b = 0; b < arch_.widths.size(); ++b) {
      const std::string name = "block" + std::to_string(b);
      Block blk{nn::Conv2d<Scalar>(in, arch_.widths[b], name + ".conv"),
                nn::BatchNorm2d<Scalar>(arch_.widths[b], name + ".bn"), {}, {}};
      blk.conv.init(gen);
      blocks_.push_back(std::move(blk));
      in = arch_.widths[b];
    }
    const int hs = arch_.head_side();
    head_ = nn::Linear<Scalar>(static_cast<Index>(in) * hs * hs, arch_.class_count, "head");
    head_.init(gen);
  }

  /// Logits, one row per sample.
  Matrix<Scalar> forward(const Tensor<Scalar>& x, const nn::ForwardOptions& opt = {}) {
    if (x.channels() != arch_.in_channels || x.height() != arch_.side || x.width() != arch_.side)
      throw ParameterError("Classifier: input shape " + x.shape().str() + " does not match architecture");
    if (x.batch() < 1) throw ParameterError("Classifier: empty batch");
    Tensor<Scalar> h = x;
    for (auto& b : blocks_) {
      h = b.conv.forward(h);
      h = b.bn.forward(h, opt);
      h = b.relu.forward(h);
      h = b.pool.forward(h);
    }
    return head_.forward(h);
  }

  Matrix<Scalar> predict_proba(const Tensor<Scalar>& x, const nn::ForwardOptions& opt = {}) {
    return softmax_rows<Scalar>(forward(x, opt));
  }

  /// Backpropagates d(loss)/d(logits) of the latest forward pass, accumulating gradients.
  void backward(const Matrix<Scalar>& dlogits) {
    Tensor<Scalar> g = head_.backward(dlogits);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      g = it->pool.backward(g);
      g = it->relu.backward(g);
      g = it->bn.backward(g);
      g = it->conv.backward(g, it != std::prev(blocks_.rend()));
    }
  }

  std::vector<nn::Param<Scalar>*> params() {
    std::vector<nn::Param<Scalar>*> out;
    for (auto& b : blocks_) {
      for (auto* p : b.conv.params()) out.push_back(p);
      for (auto* p : b.bn.params()) out.push_back(p);
    }
    for (auto* p : head_.params()) out.push_back(p);
    return out;
  }
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
  Index parameter_count() {
    Index n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }
  std::uint64_t checksum() { return checksum_params(params()); }

  void set_bn_mode(BnModeConfig m) {
    for (auto& b : blocks_) b.bn.set_mode(m);
  }
  BnModeConfig bn_mode() const { return blocks_.front().bn.mode(); }

  BNStatistics<Scalar> source_stats() const {
    BNStatistics<Scalar> s;
    for (const auto& b : blocks_) s.push_back(b.bn.source_stats());
    return s;
  }
  void set_source_stats(const BNStatistics<Scalar>& s) {
    if (s.size() != blocks_.size()) throw ParameterError("Classifier: BN layer count mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) blocks_[i].bn.set_source_stats(s[i]);
  }
  BNStatistics<Scalar> ema_stats() const {
    BNStatistics<Scalar> s;
    for (const auto& b : blocks_) s.push_back(b.bn.ema_stats());
    return s;
  }
  void reset_ema() {
    for (auto& b : blocks_) b.bn.reset_ema();
  }
  BNStatistics<Scalar> last_batch_stats() const {
    BNStatistics<Scalar> s;
    for (const auto& b : blocks_) s.push_back(b.bn.last_batch_stats());
    return s;
  }

  const ArchConfig& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }

 private:
  struct Block {
    nn::Conv2d<Scalar> conv;
    nn::BatchNorm2d<Scalar> bn;
    nn::ReLU<Scalar> relu;
    nn::MaxPool2<Scalar> pool;
  };

  ArchConfig arch_;
  std::uint64_t seed_;
  std::vector<Block> blocks_;
  nn::Linear<Scalar> head_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam; moments persist across calls to step().
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Rejects the whole update (nothing changes) if any gradient is non-finite.
  void step(const std::vector<nn::Param<Scalar>*>& params, double lr) {
    for (const auto* p : params)
      if (!p->grad.allFinite()) throw NonFiniteGradientError("Adam: non-finite gradient in " + p->name);
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != params.size()) throw ParameterError("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
    const auto step_size = static_cast<Scalar>(lr / c1);
    const auto eps = static_cast<Scalar>(config_.eps);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& g = params[i]->grad;
      m_[i] = b1 * m_[i] + (1 - b1) * g;
      v_[i] = b2 * v_[i] + (1 - b2) * g.cwiseAbs2();
      if (lr == 0.0) continue;
      params[i]->value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Matrix<Scalar>> m_, v_;
  long t_ = 0;
};

/// One optimizer step on the gradients currently accumulated in the model.
template <typename Model, typename Scalar>
void apply_update(Model& model, Adam<Scalar>& optimizer, double lr) {
  optimizer.step(model.params(), lr);
}

struct StyleArch {
  int in_channels = 3;
  int side = 16;
  int width1 = 16;
  int width2 = 32;
  bool operator==(const StyleArch&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StyleArch, in_channels, side, width1, width2)

/// Two conv blocks; taps after each ReLU (full and half resolution). The last tap is E(x).
template <typename Scalar>
class StyleEncoder {
 public:
  using scalar_type = Scalar;
  static constexpr int kTaps = 2;

  StyleEncoder(StyleArch arch, std::uint64_t seed)
      : arch_(arch), conv1_(arch.in_channels, arch.width1, "enc.conv1"), conv2_(arch.width1, arch.width2, "enc.conv2") {
    auto gen = keyed_generator(seed, Stream::init, 1);
    conv1_.init(gen);
    conv2_.init(gen);
  }

  std::vector<Tensor<Scalar>> forward(const Tensor<Scalar>& x) {
    std::vector<Tensor<Scalar>> taps;
    taps.push_back(relu1_.forward(conv1_.forward(x)));
    taps.push_back(relu2_.forward(conv2_.forward(pool_.forward(taps[0]))));
    return taps;
  }

  /// Input gradient given gradients at the taps (empty tensors mean zero).
  Tensor<Scalar> backward(const std::vector<Tensor<Scalar>>& tap_grads) {
    Tensor<Scalar> g = pool_.backward(conv2_.backward(relu2_.backward(tap_grads.at(1))));
    if (!tap_grads.at(0).empty()) g.data() += tap_grads[0].data();
    return conv1_.backward(relu1_.backward(g));
  }

  void set_frozen(bool f) {
    conv1_.set_frozen(f);
    conv2_.set_frozen(f);
  }
  bool frozen() const { return conv1_.frozen(); }

  std::vector<nn::Param<Scalar>*> params() {
    return {&conv1_.weight(), &conv1_.bias(), &conv2_.weight(), &conv2_.bias()};
  }
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
  std::uint64_t checksum() { return checksum_params(params()); }
  const StyleArch& arch() const { return arch_; }

 private:
  StyleArch arch_;
  nn::Conv2d<Scalar> conv1_, conv2_;
  nn::ReLU<Scalar> relu1_, relu2_;
  nn::MaxPool2<Scalar> pool_;
};

/// Mirrors the encoder with nearest-neighbour upsampling. Output is not clamped.
template <typename Scalar>
class StyleDecoder {
 public:
  using scalar_type = Scalar;

  StyleDecoder(StyleArch arch, std::uint64_t seed)
      : arch_(arch), conv1_(arch.width2, arch.width1, "dec.conv1"), conv2_(arch.width1, arch.width1, "dec.conv2"),
        conv3_(arch.width1, arch.in_channels, "dec.conv3") {
    auto gen = keyed_generator(seed, Stream::init, 2);
    conv1_.init(gen);
    conv2_.init(gen);
    conv3_.init(gen);
    conv3_.weight().value *= Scalar(0.5);
    conv3_.bias().value.setConstant(Scalar(0.5));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& z) {
    Tensor<Scalar> h = up_.forward(relu1_.forward(conv1_.forward(z)));
    h = relu2_.forward(conv2_.forward(h));
    return conv3_.forward(h);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> g = relu2_.backward(conv3_.backward(dy));
    g = up_.backward(conv2_.backward(g));
    return conv1_.backward(relu1_.backward(g));
  }

  std::vector<nn::Param<Scalar>*> params() {
    return {&conv1_.weight(), &conv1_.bias(), &conv2_.weight(), &conv2_.bias(), &conv3_.weight(), &conv3_.bias()};
  }
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }
  std::uint64_t checksum() { return checksum_params(params()); }
  const StyleArch& arch() const { return arch_; }

 private:
  StyleArch arch_;
  nn::Conv2d<Scalar> conv1_, conv2_, conv3_;
  nn::ReLU<Scalar> relu1_, relu2_;
  nn::Upsample2<Scalar> up_;
};

using ClassifierF = Classifier<float>;

struct SourceTrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
  bool operator==(const SourceTrainConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SourceTrainConfig, epochs, lr, batch_size, seed)

struct SourceTrainResult {
  ClassifierF model;
  std::vector<double> epoch_losses;
};

/// Supervised pre-training with batch statistics; leaves the model in eval_stats mode.
SourceTrainResult train_source(const LabeledImageSet& data, const ArchConfig& arch, const SourceTrainConfig& config);

/// Fraction of correct argmax predictions under the model's current BN mode, evaluated in
/// chunks of batch_size.
double accuracy(ClassifierF& model, const LabeledImageSet& data, Index batch_size = 256);

struct EncoderTrainConfig {
  int iterations = 300;
  double lr = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool operator==(const EncoderTrainConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderTrainConfig, iterations, lr, batch_size, seed)

/// Trains the encoder jointly with a throwaway decoder on reconstruction MSE, then freezes it.
StyleEncoder<float> pretrain_encoder(const LabeledImageSet& data, const StyleArch& arch,
                                     const EncoderTrainConfig& config, std::vector<double>* losses = nullptr);

/// Classifier checkpoint: <stem>.bin holds float32 parameters followed by BN source stats;
/// <stem>.json lists every tensor with its offset, the architecture and its hash.
void save_checkpoint(const ClassifierF& model, const std::filesystem::path& stem);
ClassifierF load_checkpoint(const std::filesystem::path& stem);
/// Same container for the style networks (kind "style_encoder" / "style_decoder").
void save_checkpoint(const StyleEncoder<float>& enc, const std::filesystem::path& stem, std::uint64_t seed);
void save_checkpoint(const StyleDecoder<float>& dec, const std::filesystem::path& stem, std::uint64_t seed);
StyleEncoder<float> load_encoder_checkpoint(const std::filesystem::path& stem);
StyleDecoder<float> load_decoder_checkpoint(const std::filesystem::path& stem);

std::string architecture_hash(const ArchConfig& arch);
std::string architecture_hash(const StyleArch& arch);

}  // namespace gtta
