#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gtta/bn_adapt.hpp"
#include "gtta/tensor.hpp"

namespace gtta::nn {

template <typename Scalar>
struct Param {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Param() = default;
  Param(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(Matrix<Scalar>::Zero(rows, cols)), grad(Matrix<Scalar>::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct ForwardOptions {
  /// Source pre-training: normalize with batch moments and advance the source running stats.
  bool source_training = false;
  /// In ema mode, keep the updated running statistics after this pass.
  bool commit_ema = true;
};

template <typename Scalar>
void he_uniform(Matrix<Scalar>& w, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(dist(rng));
}

/// 3x3 convolution, stride 1, zero padding 1.
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Index in_channels, Index out_channels, const std::string& name)
      : in_(in_channels), out_(out_channels),
        weight_(name + ".weight", out_channels, in_channels * 9), bias_(name + ".bias", out_channels, 1) {}

  void init(std::mt19937_64& rng) {
    he_uniform(weight_.value, in_ * 9, rng);
    bias_.value.setZero();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.channels() != in_) throw ParameterError("Conv2d: expected " + std::to_string(in_) + " input channels");
    in_shape_ = x.shape();
    im2col(x);
    Tensor<Scalar> y(Shape{x.batch(), out_, x.height(), x.width()});
    y.data().noalias() = weight_.value * cols_;
    y.data().colwise() += bias_.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients unless frozen; returns the input gradient if requested.
  Tensor<Scalar> backward(const Tensor<Scalar>& dy, bool need_input_grad = true) {
    if (!frozen_) {
      weight_.grad.noalias() += dy.data() * cols_.transpose();
      bias_.grad.col(0) += dy.data().rowwise().sum();
    }
    if (!need_input_grad) return {};
    RowMatrix<Scalar> dcols = weight_.value.transpose() * dy.data();
    return col2im(dcols);
  }

  void set_frozen(bool f) { frozen_ = f; }
  bool frozen() const { return frozen_; }
  std::vector<Param<Scalar>*> params() { return {&weight_, &bias_}; }
  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

 private:
  void im2col(const Tensor<Scalar>& x) {
    const Index h = x.height(), w = x.width(), hw = h * w, n_total = x.batch();
    cols_.setZero(in_ * 9, n_total * hw);
    const auto& src = x.data();
    for (Index c = 0; c < in_; ++c) {
      const Scalar* srow = src.data() + c * src.cols();
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const Index dy = ky - 1, dx = kx - 1;
          Scalar* drow = cols_.data() + (c * 9 + ky * 3 + kx) * cols_.cols();
          const Index x0 = std::max<Index>(0, -dx), x1 = std::min<Index>(w, w - dx);
          for (Index n = 0; n < n_total; ++n)
            for (Index yy = std::max<Index>(0, -dy); yy < std::min<Index>(h, h - dy); ++yy) {
              const Scalar* s = srow + n * hw + (yy + dy) * w + dx;
              Scalar* d = drow + n * hw + yy * w;
              for (Index xx = x0; xx < x1; ++xx) d[xx] = s[xx];
            }
        }
    }
  }

  Tensor<Scalar> col2im(const RowMatrix<Scalar>& dcols) const {
    Tensor<Scalar> dx(in_shape_);
    const Index h = in_shape_.height, w = in_shape_.width, hw = h * w, n_total = in_shape_.batch;
    auto& dst = dx.data();
    for (Index c = 0; c < in_; ++c) {
      Scalar* drow = dst.data() + c * dst.cols();
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const Index dy = ky - 1, dxo = kx - 1;
          const Scalar* srow = dcols.data() + (c * 9 + ky * 3 + kx) * dcols.cols();
          const Index x0 = std::max<Index>(0, -dxo), x1 = std::min<Index>(w, w - dxo);
          for (Index n = 0; n < n_total; ++n)
            for (Index yy = std::max<Index>(0, -dy); yy < std::min<Index>(h, h - dy); ++yy) {
              Scalar* d = drow + n * hw + (yy + dy) * w + dxo;
              const Scalar* s = srow + n * hw + yy * w;
              for (Index xx = x0; xx < x1; ++xx) d[xx] += s[xx];
            }
        }
    }
    return dx;
  }

  Index in_ = 0, out_ = 0;
  Param<Scalar> weight_, bias_;
  RowMatrix<Scalar> cols_;
  Shape in_shape_;
  bool frozen_ = false;
};

/// Batch normalization whose statistics source is selectable at run time.
///
/// The statistics used for normalization are always of the form
///   mu = fixed_mu + w * batch_mu,  sigma = max(fixed_sigma + w * batch_sigma, floor)
/// with w = 1 for batch statistics, w = 0 for stored source statistics and w = alpha for
/// the interpolated and EMA modes; backward differentiates through the batch part.
template <typename Scalar>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(Index channels, const std::string& name)
      : gamma_(name + ".gamma", channels, 1), beta_(name + ".beta", channels, 1) {
    gamma_.value.setOnes();
    source_.mean = Vector<Scalar>::Zero(channels);
    source_.std = Vector<Scalar>::Ones(channels);
    ema_ = source_;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const ForwardOptions& opt) {
    const auto& d = x.data();
    batch_ = channel_stats_unfloored(x);
    ChannelStats<Scalar> used;
    if (opt.source_training) {
      used = batch_;
      weight_ = 1;
      const auto m = static_cast<Scalar>(kMomentum);
      source_.mean = (1 - m) * source_.mean + m * batch_.mean;
      source_.std = (1 - m) * source_.std + m * batch_.std;
      floor_std(source_);
    } else {
      switch (mode_.mode) {
        case BnMode::train_stats:
          used = batch_;
          weight_ = 1;
          break;
        case BnMode::eval_stats:
          used = source_;
          weight_ = 0;
          break;
        case BnMode::interpolated:
          used = interpolate_stats(source_, floored(batch_), static_cast<Scalar>(mode_.alpha));
          weight_ = static_cast<Scalar>(mode_.alpha);
          break;
        case BnMode::ema:
          used = ema_update_stats(ema_, floored(batch_), static_cast<Scalar>(mode_.alpha));
          weight_ = static_cast<Scalar>(mode_.alpha);
          if (opt.commit_ema) ema_ = used;
          break;
      }
    }
    clamped_.resize(used.std.size());
    for (Index c = 0; c < used.std.size(); ++c) {
      clamped_[c] = !(used.std(c) > static_cast<Scalar>(kStdFloor));
      if (clamped_[c]) used.std(c) = static_cast<Scalar>(kStdFloor);
    }
    used_ = used;

    Tensor<Scalar> y(x.shape());
    xhat_.resize(d.rows(), d.cols());
    xhat_ = (d.colwise() - used.mean).array().colwise() / used.std.array();
    y.data() = (xhat_.array().colwise() * gamma_.value.col(0).array()).colwise() + beta_.value.col(0).array();
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const auto& g = dy.data();
    const Index count = g.cols();
    Tensor<Scalar> dx(dy.shape());
    for (Index c = 0; c < g.rows(); ++c) {
      const auto gr = g.row(c).array();
      const auto xr = xhat_.row(c).array();
      const Scalar sum_g = gr.sum();
      const Scalar sum_gx = (gr * xr).sum();
      gamma_.grad(c, 0) += sum_gx;
      beta_.grad(c, 0) += sum_g;

      const Scalar gamma = gamma_.value(c, 0);
      const Scalar sigma = used_.std(c);
      auto out = dx.data().row(c).array();
      out = gr * (gamma / sigma);
      if (weight_ == 0) continue;
      const Scalar d_mu = -gamma / sigma * sum_g;
      out += weight_ * d_mu / static_cast<Scalar>(count);
      const Scalar s = batch_.std(c);
      if (!clamped_[c] && s > 0) {
        const Scalar d_sigma = -gamma / sigma * sum_gx;
        // x - batch_mean recovered from the normalized values.
        const Scalar shift = used_.mean(c) - batch_.mean(c);
        out += (weight_ * d_sigma / (static_cast<Scalar>(count) * s)) * (xr * sigma + shift);
      }
    }
    return dx;
  }

  std::vector<Param<Scalar>*> params() { return {&gamma_, &beta_}; }

  void set_mode(BnModeConfig m) { mode_ = m; }
  const BnModeConfig& mode() const { return mode_; }
  const ChannelStats<Scalar>& source_stats() const { return source_; }
  void set_source_stats(const ChannelStats<Scalar>& s) {
    if (s.channels() != source_.channels()) throw ParameterError("BatchNorm2d: stats channel mismatch");
    source_ = s;
  }
  const ChannelStats<Scalar>& ema_stats() const { return ema_; }
  void reset_ema() { ema_ = source_; }
  /// Floored moments of the most recent input batch.
  ChannelStats<Scalar> last_batch_stats() const { return floored(batch_); }
  Index channels() const { return source_.channels(); }

 private:
  static ChannelStats<Scalar> channel_stats_unfloored(const Tensor<Scalar>& x) {
    const auto& d = x.data();
    const auto count = static_cast<Scalar>(d.cols());
    ChannelStats<Scalar> s;
    s.mean = d.rowwise().sum() / count;
    s.std = ((d.colwise() - s.mean).array().square().rowwise().sum() / count).sqrt().matrix();
    return s;
  }
  static ChannelStats<Scalar> floored(ChannelStats<Scalar> s) {
    floor_std(s);
    return s;
  }

  Param<Scalar> gamma_, beta_;
  ChannelStats<Scalar> source_, ema_;
  BnModeConfig mode_{};

  ChannelStats<Scalar> batch_, used_;
  std::vector<bool> clamped_;
  RowMatrix<Scalar> xhat_;
  Scalar weight_ = 0;
};

template <typename Scalar>
class ReLU {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> y(x.shape());
    y.data() = x.data().cwiseMax(Scalar(0));
    mask_ = (x.data().array() > Scalar(0)).template cast<Scalar>();
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    Tensor<Scalar> dx(dy.shape());
    dx.data() = (dy.data().array() * mask_.array()).matrix();
    return dx;
  }

 private:
  RowMatrix<Scalar> mask_;
};

/// 2x2 max pooling with stride 2.
template <typename Scalar>
class MaxPool2 {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.height() % 2 || x.width() % 2) throw ParameterError("MaxPool2: spatial size must be even");
    in_shape_ = x.shape();
    const Index oh = x.height() / 2, ow = x.width() / 2, w = x.width();
    Tensor<Scalar> y(Shape{x.batch(), x.channels(), oh, ow});
    argmax_.resize(static_cast<std::size_t>(y.data().size()));
    std::size_t k = 0;
    for (Index c = 0; c < x.channels(); ++c)
      for (Index n = 0; n < x.batch(); ++n) {
        const Index base = n * x.plane();
        for (Index i = 0; i < oh; ++i)
          for (Index j = 0; j < ow; ++j, ++k) {
            Index best = base + 2 * i * w + 2 * j;
            for (Index a = 0; a < 2; ++a)
              for (Index b = 0; b < 2; ++b) {
                const Index idx = base + (2 * i + a) * w + 2 * j + b;
                if (x.data()(c, idx) > x.data()(c, best)) best = idx;
              }
            y.data()(c, n * oh * ow + i * ow + j) = x.data()(c, best);
            argmax_[k] = best;
          }
      }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    Tensor<Scalar> dx(in_shape_);
    const Index oplane = dy.plane();
    std::size_t k = 0;
    for (Index c = 0; c < dy.channels(); ++c)
      for (Index n = 0; n < dy.batch(); ++n)
        for (Index p = 0; p < oplane; ++p, ++k) dx.data()(c, argmax_[k]) += dy.data()(c, n * oplane + p);
    return dx;
  }

 private:
  Shape in_shape_;
  std::vector<Index> argmax_;
};

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
class Upsample2 {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) const {
    const Index h = x.height(), w = x.width();
    Tensor<Scalar> y(Shape{x.batch(), x.channels(), 2 * h, 2 * w});
    for (Index c = 0; c < x.channels(); ++c)
      for (Index n = 0; n < x.batch(); ++n)
        for (Index i = 0; i < 2 * h; ++i)
          for (Index j = 0; j < 2 * w; ++j) y(n, c, i, j) = x(n, c, i / 2, j / 2);
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    const Index h = dy.height() / 2, w = dy.width() / 2;
    Tensor<Scalar> dx(Shape{dy.batch(), dy.channels(), h, w});
    for (Index c = 0; c < dy.channels(); ++c)
      for (Index n = 0; n < dy.batch(); ++n)
        for (Index i = 0; i < 2 * h; ++i)
          for (Index j = 0; j < 2 * w; ++j) dx(n, c, i / 2, j / 2) += dy(n, c, i, j);
    return dx;
  }
};

/// Fully connected head on the flattened (channel, y, x) features of each sample.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(Index in_features, Index out_features, const std::string& name)
      : weight_(name + ".weight", out_features, in_features), bias_(name + ".bias", out_features, 1) {}

  void init(std::mt19937_64& rng) {
    he_uniform(weight_.value, weight_.value.cols(), rng);
    weight_.value *= static_cast<Scalar>(std::sqrt(0.5));
    bias_.value.setZero();
  }

  /// Returns (batch x out_features) logits.
  Matrix<Scalar> forward(const Tensor<Scalar>& x) {
    in_shape_ = x.shape();
    const Index hw = x.plane();
    if (x.channels() * hw != weight_.value.cols()) throw ParameterError("Linear: feature size mismatch");
    flat_.resize(x.batch(), x.channels() * hw);
    for (Index n = 0; n < x.batch(); ++n)
      for (Index c = 0; c < x.channels(); ++c) flat_.row(n).segment(c * hw, hw) = x.plane_of(n, c);
    Matrix<Scalar> out = flat_ * weight_.value.transpose();
    out.rowwise() += bias_.value.col(0).transpose();
    return out;
  }

  Tensor<Scalar> backward(const Matrix<Scalar>& dout) {
    weight_.grad.noalias() += dout.transpose() * flat_;
    bias_.grad.col(0) += dout.colwise().sum().transpose();
    const Matrix<Scalar> dflat = dout * weight_.value;
    Tensor<Scalar> dx(in_shape_);
    const Index hw = in_shape_.plane();
    for (Index n = 0; n < in_shape_.batch; ++n)
      for (Index c = 0; c < in_shape_.channels; ++c) dx.plane_of(n, c) = dflat.row(n).segment(c * hw, hw);
    return dx;
  }

  std::vector<Param<Scalar>*> params() { return {&weight_, &bias_}; }

 private:
  Param<Scalar> weight_, bias_;
  Matrix<Scalar> flat_;
  Shape in_shape_;
};

}  // namespace gtta::nn
