#include "gtta/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gtta/self_training.hpp"

namespace gtta {

namespace {

std::vector<Index> shuffled_indices(Index n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto gen = keyed_generator(seed, Stream::shuffle, epoch);
  std::shuffle(idx.begin(), idx.end(), gen);
  return idx;
}

struct NamedTensor {
  std::string name;
  Matrix<float>* value;
};

void write_container(const std::filesystem::path& stem, const std::string& kind, const nlohmann::json& arch,
                     const std::string& arch_hash, std::uint64_t seed, const std::vector<NamedTensor>& tensors) {
  auto bin = stem;
  bin += ".bin";
  auto manifest_path = stem;
  manifest_path += ".json";
  std::vector<float> blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : tensors) {
    entries.push_back({{"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}, {"offset", blob.size()}});
    blob.insert(blob.end(), t.value->data(), t.value->data() + t.value->size());
  }
  io::write_floats(bin, blob);
  nlohmann::json m;
  m["format"] = "gtta-checkpoint";
  m["version"] = 1;
  m["kind"] = kind;
  m["architecture"] = arch;
  m["architecture_hash"] = arch_hash;
  m["seed"] = seed;
  m["dtype"] = "float32";
  m["blob"] = bin.filename().string();
  m["blob_floats"] = blob.size();
  m["blob_checksum"] = io::hex64(io::fnv1a(blob.data(), blob.size() * sizeof(float)));
  m["tensors"] = entries;
  io::write_json(manifest_path, m);
}

struct Container {
  nlohmann::json manifest;
  std::vector<float> blob;
};

Container read_container(const std::filesystem::path& stem, const std::string& kind) {
  auto manifest_path = stem;
  manifest_path += ".json";
  Container c;
  c.manifest = io::read_json(manifest_path);
  if (c.manifest.value("format", "") != "gtta-checkpoint" || c.manifest.value("kind", "") != kind)
    throw ParameterError(manifest_path.string() + ": not a " + kind + " checkpoint");
  c.blob = io::read_floats(stem.parent_path() / c.manifest.at("blob").get<std::string>());
  if (c.blob.size() != c.manifest.at("blob_floats").get<std::size_t>() ||
      io::hex64(io::fnv1a(c.blob.data(), c.blob.size() * sizeof(float))) != c.manifest.at("blob_checksum"))
    throw ParameterError(manifest_path.string() + ": blob does not match manifest");
  return c;
}

void fill_from_container(const Container& c, const std::vector<NamedTensor>& tensors) {
  const auto& entries = c.manifest.at("tensors");
  if (entries.size() != tensors.size()) throw ParameterError("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& e = entries[i];
    auto& m = *tensors[i].value;
    if (e.at("name") != tensors[i].name || e.at("rows").get<Index>() != m.rows() || e.at("cols").get<Index>() != m.cols())
      throw ParameterError("checkpoint: tensor '" + tensors[i].name + "' layout mismatch");
    const auto off = e.at("offset").get<std::size_t>();
    if (off + static_cast<std::size_t>(m.size()) > c.blob.size()) throw ParameterError("checkpoint: blob too short");
    std::copy(c.blob.begin() + static_cast<std::ptrdiff_t>(off),
              c.blob.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(m.size())), m.data());
  }
}

template <typename Net>
std::vector<NamedTensor> param_tensors(Net& net) {
  std::vector<NamedTensor> out;
  for (auto* p : net.params()) out.push_back({p->name, &p->value});
  return out;
}

std::string hash_json(const nlohmann::json& j) {
  const auto s = j.dump();
  return io::hex64(io::fnv1a(s.data(), s.size()));
}

}  // namespace

std::string architecture_hash(const ArchConfig& arch) {
  return hash_json({{"classifier", nlohmann::json(arch)}});
}
std::string architecture_hash(const StyleArch& arch) { return hash_json({{"style", nlohmann::json(arch)}}); }

SourceTrainResult train_source(const LabeledImageSet& data, const ArchConfig& arch, const SourceTrainConfig& config) {
  if (data.size() < 2) throw ParameterError("train_source: need at least two samples");
  if (data.class_count != arch.class_count) throw ParameterError("train_source: class count mismatch");
  if (config.batch_size < 2) throw ParameterError("train_source: batch_size must be >= 2");
  SourceTrainResult result{ClassifierF(arch, config.seed), {}};
  auto& model = result.model;
  Adam<float> adam;
  const nn::ForwardOptions train_opts{.source_training = true, .commit_ema = false};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), config.seed, static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    Index seen = 0;
    for (Index start = 0; start + 1 < data.size(); start += config.batch_size) {
      const Index end = std::min<Index>(data.size(), start + config.batch_size);
      const std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(end - start));
      const auto batch = data.subset(idx);
      model.zero_grad();
      const auto probs = softmax_rows<float>(model.forward(batch.images, train_opts));
      const auto ce = ce_loss_source<float>(batch.labels, probs);
      if (!std::isfinite(ce.value)) {
        std::ostringstream msg;
        msg << "train_source diverged: loss " << ce.value << " at epoch " << epoch << ", batch starting at " << start
            << " (lr " << config.lr << ")";
        throw TrainingError(msg.str());
      }
      model.backward(ce.grad_logits);
      adam.step(model.params(), config.lr);
      total += ce.value * static_cast<double>(end - start);
      seen += end - start;
    }
    result.epoch_losses.push_back(total / static_cast<double>(seen));
  }
  model.set_bn_mode({BnMode::eval_stats, 0.0});
  model.reset_ema();
  return result;
}

double accuracy(ClassifierF& model, const LabeledImageSet& data, Index batch_size) {
  if (data.size() == 0) throw ParameterError("accuracy: empty data");
  Index correct = 0;
  const nn::ForwardOptions opts{.source_training = false, .commit_ema = false};
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index end = std::min(data.size(), start + batch_size);
    const auto chunk = data.slice(start, end);
    const auto pred = argmax_rows(model.forward(chunk.images, opts));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == chunk.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

StyleEncoder<float> pretrain_encoder(const LabeledImageSet& data, const StyleArch& arch,
                                     const EncoderTrainConfig& config, std::vector<double>* losses) {
  StyleEncoder<float> enc(arch, config.seed);
  StyleDecoder<float> dec(arch, config.seed ^ 0x5eedULL);
  Adam<float> adam_enc, adam_dec;
  const Index bs = std::min<Index>(config.batch_size, data.size());
  for (int it = 0; it < config.iterations; ++it) {
    auto gen = keyed_generator(config.seed, Stream::source_sample, 0xE0C0DE, it);
    std::uniform_int_distribution<Index> pick(0, data.size() - 1);
    std::vector<Index> idx(static_cast<std::size_t>(bs));
    for (auto& i : idx) i = pick(gen);
    const auto x = data.images.select(idx);
    enc.zero_grad();
    dec.zero_grad();
    const auto taps = enc.forward(x);
    const auto recon = dec.forward(taps.back());
    Tensor<float> diff(x.shape());
    diff.data() = recon.data() - x.data();
    const double loss = static_cast<double>(diff.data().squaredNorm()) / static_cast<double>(diff.data().size());
    if (!std::isfinite(loss)) throw TrainingError("pretrain_encoder diverged at iteration " + std::to_string(it));
    if (losses) losses->push_back(loss);
    diff.data() *= 2.0f / static_cast<float>(diff.data().size());
    const auto dz = dec.backward(diff);
    enc.backward({Tensor<float>{}, dz});
    adam_dec.step(dec.params(), config.lr);
    adam_enc.step(enc.params(), config.lr);
  }
  enc.set_frozen(true);
  return enc;
}

void save_checkpoint(const ClassifierF& model_in, const std::filesystem::path& stem) {
  ClassifierF model = model_in;
  auto tensors = param_tensors(model);
  auto stats = model.source_stats();
  std::vector<Matrix<float>> holders;
  holders.reserve(stats.size() * 2);
  for (std::size_t m = 0; m < stats.size(); ++m) {
    holders.emplace_back(stats[m].mean);
    holders.emplace_back(stats[m].std);
  }
  for (std::size_t m = 0; m < stats.size(); ++m) {
    tensors.push_back({"bn" + std::to_string(m) + ".source_mean", &holders[2 * m]});
    tensors.push_back({"bn" + std::to_string(m) + ".source_std", &holders[2 * m + 1]});
  }
  write_container(stem, "classifier", nlohmann::json(model.arch()), architecture_hash(model.arch()), model.seed(),
                  tensors);
}

ClassifierF load_checkpoint(const std::filesystem::path& stem) {
  const auto c = read_container(stem, "classifier");
  const auto arch = c.manifest.at("architecture").get<ArchConfig>();
  if (c.manifest.at("architecture_hash") != architecture_hash(arch))
    throw ParameterError("checkpoint: architecture hash mismatch");
  ClassifierF model(arch, c.manifest.at("seed").get<std::uint64_t>());
  auto tensors = param_tensors(model);
  auto stats = model.source_stats();
  std::vector<Matrix<float>> holders;
  for (const auto& s : stats) {
    holders.emplace_back(s.mean);
    holders.emplace_back(s.std);
  }
  for (std::size_t m = 0; m < stats.size(); ++m) {
    tensors.push_back({"bn" + std::to_string(m) + ".source_mean", &holders[2 * m]});
    tensors.push_back({"bn" + std::to_string(m) + ".source_std", &holders[2 * m + 1]});
  }
  fill_from_container(c, tensors);
  for (std::size_t m = 0; m < stats.size(); ++m) {
    stats[m].mean = holders[2 * m].col(0);
    stats[m].std = holders[2 * m + 1].col(0);
  }
  model.set_source_stats(stats);
  model.reset_ema();
  model.set_bn_mode({BnMode::eval_stats, 0.0});
  return model;
}

void save_checkpoint(const StyleEncoder<float>& enc_in, const std::filesystem::path& stem, std::uint64_t seed) {
  auto enc = enc_in;
  write_container(stem, "style_encoder", nlohmann::json(enc.arch()), architecture_hash(enc.arch()), seed,
                  param_tensors(enc));
}

void save_checkpoint(const StyleDecoder<float>& dec_in, const std::filesystem::path& stem, std::uint64_t seed) {
  auto dec = dec_in;
  write_container(stem, "style_decoder", nlohmann::json(dec.arch()), architecture_hash(dec.arch()), seed,
                  param_tensors(dec));
}

StyleEncoder<float> load_encoder_checkpoint(const std::filesystem::path& stem) {
  const auto c = read_container(stem, "style_encoder");
  StyleEncoder<float> enc(c.manifest.at("architecture").get<StyleArch>(), c.manifest.at("seed").get<std::uint64_t>());
  fill_from_container(c, param_tensors(enc));
  enc.set_frozen(true);
  return enc;
}

StyleDecoder<float> load_decoder_checkpoint(const std::filesystem::path& stem) {
  const auto c = read_container(stem, "style_decoder");
  StyleDecoder<float> dec(c.manifest.at("architecture").get<StyleArch>(), c.manifest.at("seed").get<std::uint64_t>());
  fill_from_container(c, param_tensors(dec));
  return dec;
}

}  // namespace gtta
