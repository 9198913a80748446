#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gtta/errors.hpp"

namespace gtta {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct Shape {
  Index batch = 0;
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index plane() const { return height * width; }
  Index size() const { return batch * channels * height * width; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," +
           std::to_string(height) + "," + std::to_string(width) + ")";
  }
};

/// Rank-4 (batch, channel, height, width) tensor stored channel-major: one row per
/// channel, holding the planes of all samples back to back. Convolutions become a single
/// GEMM and per-channel statistics become row reductions.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(shape), data_(RowMatrix<Scalar>::Zero(shape.channels, shape.batch * shape.plane())) {}
  Tensor(Index batch, Index channels, Index height, Index width)
      : Tensor(Shape{batch, channels, height, width}) {}

  const Shape& shape() const { return shape_; }
  Index batch() const { return shape_.batch; }
  Index channels() const { return shape_.channels; }
  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index plane() const { return shape_.plane(); }
  bool empty() const { return shape_.batch == 0; }

  RowMatrix<Scalar>& data() { return data_; }
  const RowMatrix<Scalar>& data() const { return data_; }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_(c, n * plane() + y * shape_.width + x);
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_(c, n * plane() + y * shape_.width + x);
  }

  /// The contiguous (height*width) plane of sample n, channel c.
  auto plane_of(Index n, Index c) { return data_.row(c).segment(n * plane(), plane()); }
  auto plane_of(Index n, Index c) const { return data_.row(c).segment(n * plane(), plane()); }

  /// All channels of sample n as a (channels x plane) block.
  auto sample_block(Index n) { return data_.middleCols(n * plane(), plane()); }
  auto sample_block(Index n) const { return data_.middleCols(n * plane(), plane()); }

  Tensor sample(Index n) const {
    Tensor out(Shape{1, shape_.channels, shape_.height, shape_.width});
    out.data_ = sample_block(n);
    return out;
  }

  Tensor select(std::span<const Index> indices) const {
    Tensor out(Shape{static_cast<Index>(indices.size()), shape_.channels, shape_.height, shape_.width});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (indices[k] < 0 || indices[k] >= shape_.batch) throw ParameterError("Tensor::select: index out of range");
      out.sample_block(static_cast<Index>(k)) = sample_block(indices[k]);
    }
    return out;
  }

  /// Copies sample src_n of src into slot n of this tensor.
  void set_sample(Index n, const Tensor& src, Index src_n) {
    if (src.channels() != channels() || src.plane() != plane())
      throw ParameterError("Tensor::set_sample: shape mismatch");
    sample_block(n) = src.sample_block(src_n);
  }

  static Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
      throw ParameterError("Tensor::concat: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out(Shape{a.batch() + b.batch(), a.channels(), a.height(), a.width()});
    out.data_.leftCols(a.data_.cols()) = a.data_;
    out.data_.rightCols(b.data_.cols()) = b.data_;
    return out;
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    out.data() = data_.template cast<To>();
    return out;
  }

  std::vector<Scalar> to_nchw() const {
    std::vector<Scalar> flat(static_cast<std::size_t>(shape_.size()));
    auto it = flat.begin();
    for (Index n = 0; n < batch(); ++n)
      for (Index c = 0; c < channels(); ++c) {
        auto p = plane_of(n, c);
        it = std::copy(p.begin(), p.end(), it);
      }
    return flat;
  }

  static Tensor from_nchw(Shape shape, std::span<const Scalar> flat) {
    if (static_cast<Index>(flat.size()) != shape.size()) throw ParameterError("Tensor::from_nchw: size mismatch");
    Tensor out(shape);
    auto it = flat.begin();
    for (Index n = 0; n < shape.batch; ++n)
      for (Index c = 0; c < shape.channels; ++c) {
        auto p = out.plane_of(n, c);
        std::copy(it, it + shape.plane(), p.begin());
        it += shape.plane();
      }
    return out;
  }

 private:
  Shape shape_;
  RowMatrix<Scalar> data_;
};

using ImageBatch = Tensor<float>;

/// Row-wise softmax of a (batch x classes) logit matrix.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out = logits;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Lowest-index argmax of each row.
template <typename Derived>
std::vector<int> argmax_rows(const Eigen::MatrixBase<Derived>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(i, c) > m(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace gtta
