#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gtta/errors.hpp"
#include "gtta/tensor.hpp"

namespace gtta {

/// Lower bound applied to every standard deviation after it is computed or combined.
inline constexpr double kStdFloor = 1e-5;

/// Per-channel mean and standard deviation of one normalization layer.
template <typename Scalar>
struct ChannelStats {
  Vector<Scalar> mean;
  Vector<Scalar> std;

  Index channels() const { return mean.size(); }
  bool operator==(const ChannelStats& o) const {
    return mean.size() == o.mean.size() && std.size() == o.std.size() && mean == o.mean && std == o.std;
  }
};

/// One ChannelStats per BN layer, ordered input to output.
template <typename Scalar>
using BNStatistics = std::vector<ChannelStats<Scalar>>;

template <typename Scalar>
void floor_std(ChannelStats<Scalar>& s) {
  s.std = s.std.cwiseMax(static_cast<Scalar>(kStdFloor));
}

/// Biased per-channel moments over all samples and spatial positions.
template <typename Scalar>
ChannelStats<Scalar> channel_stats(const Tensor<Scalar>& x) {
  const auto& d = x.data();
  const auto count = static_cast<Scalar>(d.cols());
  ChannelStats<Scalar> s;
  s.mean = d.rowwise().sum() / count;
  s.std = ((d.colwise() - s.mean).array().square().rowwise().sum() / count).sqrt().matrix();
  floor_std(s);
  return s;
}

namespace detail {
template <typename Scalar>
void check_same_structure(const ChannelStats<Scalar>& a, const ChannelStats<Scalar>& b) {
  if (a.mean.size() != b.mean.size() || a.std.size() != b.std.size() || a.mean.size() != a.std.size())
    throw ParameterError("BN statistics: channel structure mismatch");
}
template <typename Scalar>
void check_alpha(Scalar alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw ParameterError("BN statistics: alpha must lie in [0,1]");
}
}  // namespace detail

/// mu = (1-a) mu_S + a mu_T and sigma = (1-a) sigma_S + a sigma_T (stds, not variances).
template <typename Scalar>
ChannelStats<Scalar> interpolate_stats(const ChannelStats<Scalar>& source, const ChannelStats<Scalar>& test,
                                       Scalar alpha) {
  detail::check_same_structure(source, test);
  detail::check_alpha(alpha);
  const Scalar keep = Scalar(1) - alpha;
  ChannelStats<Scalar> out;
  out.mean = keep * source.mean + alpha * test.mean;
  out.std = keep * source.std + alpha * test.std;
  floor_std(out);
  return out;
}

template <typename Scalar>
BNStatistics<Scalar> interpolate_stats(const BNStatistics<Scalar>& source, const BNStatistics<Scalar>& test,
                                       Scalar alpha) {
  if (source.size() != test.size()) throw ParameterError("BN statistics: layer count mismatch");
  BNStatistics<Scalar> out;
  out.reserve(source.size());
  for (std::size_t m = 0; m < source.size(); ++m) out.push_back(interpolate_stats(source[m], test[m], alpha));
  return out;
}

/// One step of the running-statistics recursion. Same arithmetic as interpolation, but the
/// first argument is the state carried from the previous time step.
template <typename Scalar>
ChannelStats<Scalar> ema_update_stats(const ChannelStats<Scalar>& running, const ChannelStats<Scalar>& test,
                                      Scalar alpha) {
  return interpolate_stats(running, test, alpha);
}

template <typename Scalar>
BNStatistics<Scalar> ema_update_stats(const BNStatistics<Scalar>& running, const BNStatistics<Scalar>& test,
                                      Scalar alpha) {
  return interpolate_stats(running, test, alpha);
}

enum class BnVariant { bn0, bn0_1, bn1, bn_ema };

inline std::string_view to_string(BnVariant v) {
  switch (v) {
    case BnVariant::bn0: return "bn0";
    case BnVariant::bn0_1: return "bn0_1";
    case BnVariant::bn1: return "bn1";
    case BnVariant::bn_ema: return "bn_ema";
  }
  return "?";
}

inline BnVariant parse_bn_variant(std::string_view s) {
  if (s == "bn0") return BnVariant::bn0;
  if (s == "bn0_1") return BnVariant::bn0_1;
  if (s == "bn1") return BnVariant::bn1;
  if (s == "bn_ema") return BnVariant::bn_ema;
  throw ParameterError("unknown BN variant '" + std::string(s) + "'");
}

/// How a normalization layer picks the statistics it normalizes with.
enum class BnMode { train_stats, eval_stats, interpolated, ema };

struct BnModeConfig {
  BnMode mode = BnMode::eval_stats;
  double alpha = 0.0;
  bool operator==(const BnModeConfig&) const = default;
};

struct BNAdaptConfig {
  BnVariant variant = BnVariant::bn1;
  double alpha = 1.0;

  /// Fills in the alpha each fixed variant implies; the EMA momentum defaults to 0.1.
  static BNAdaptConfig make(BnVariant variant, std::optional<double> alpha = std::nullopt) {
    BNAdaptConfig c{variant, 0.0};
    switch (variant) {
      case BnVariant::bn0: c.alpha = 0.0; break;
      case BnVariant::bn0_1: c.alpha = 0.1; break;
      case BnVariant::bn1: c.alpha = 1.0; break;
      case BnVariant::bn_ema: c.alpha = alpha.value_or(0.1); break;
    }
    if (alpha && variant != BnVariant::bn_ema && *alpha != c.alpha)
      throw ConfigurationError("bn.alpha is fixed by variant " + std::string(to_string(variant)));
    c.validate();
    return c;
  }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigurationError("bn.alpha must lie in [0,1]");
    if ((variant == BnVariant::bn0 && alpha != 0.0) || (variant == BnVariant::bn1 && alpha != 1.0) ||
        (variant == BnVariant::bn0_1 && alpha != 0.1))
      throw ConfigurationError("bn.alpha inconsistent with bn.variant");
  }

  BnModeConfig mode() const {
    switch (variant) {
      case BnVariant::bn0: return {BnMode::eval_stats, 0.0};
      case BnVariant::bn0_1: return {BnMode::interpolated, alpha};
      case BnVariant::bn1: return {BnMode::train_stats, 1.0};
      case BnVariant::bn_ema: return {BnMode::ema, alpha};
    }
    return {};
  }

  bool operator==(const BNAdaptConfig&) const = default;
};

/// Pre-normalization batch moments of every BN layer, from one forward pass in the model's
/// current mode. Running EMA state is not advanced.
template <typename Model>
auto extract_batch_stats(Model& model, const Tensor<typename Model::scalar_type>& batch) {
  if (batch.batch() * batch.plane() < 2)
    throw DegenerateStatisticsError("extract_batch_stats: need at least two values per channel");
  typename Model::forward_options opts;
  opts.commit_ema = false;
  model.forward(batch, opts);
  return model.last_batch_stats();
}

}  // namespace gtta
