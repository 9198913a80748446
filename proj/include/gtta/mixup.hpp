#pragma once

#include <span>
#include <vector>

#include "gtta/errors.hpp"
#include "gtta/nn/layers.hpp"
#include "gtta/tensor.hpp"

namespace gtta {

struct MixupConfig {
  double lambda = 1.0 / 3.0;
  bool enabled = true;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigurationError("mixup.lambda must lie in [0,1]");
  }
  bool operator==(const MixupConfig&) const = default;
};

/// Index of the test row with the largest dot product against the source softmax;
/// ties go to the lowest index.
template <typename Scalar, typename Derived>
Index select_partner(const Eigen::MatrixBase<Derived>& source_softmax, const Matrix<Scalar>& test_softmax) {
  if (test_softmax.rows() == 0) throw ParameterError("select_partner: empty test batch");
  if (source_softmax.size() != test_softmax.cols())
    throw ParameterError("select_partner: class count mismatch");
  const Vector<Scalar> p = source_softmax.derived().template cast<Scalar>().reshaped();
  const Vector<Scalar> scores = test_softmax * p;
  Index best = 0;
  for (Index i = 1; i < scores.size(); ++i)
    if (scores(i) > scores(best)) best = i;
  return best;
}

/// (1 - lambda) * source[j] + lambda * test[i], as a one-sample tensor.
template <typename Scalar>
Tensor<Scalar> mix_images(const Tensor<Scalar>& source, Index j, const Tensor<Scalar>& test, Index i, double lambda) {
  if (source.channels() != test.channels() || source.height() != test.height() || source.width() != test.width())
    throw ParameterError("mix_images: shape mismatch " + source.shape().str() + " vs " + test.shape().str());
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("mix_images: lambda must lie in [0,1]");
  const auto l = static_cast<Scalar>(lambda);
  Tensor<Scalar> out(Shape{1, source.channels(), source.height(), source.width()});
  out.data() = ((Scalar(1) - l) * source.sample_block(j) + l * test.sample_block(i))
                   .cwiseMax(Scalar(0))
                   .cwiseMin(Scalar(1));
  return out;
}

template <typename Scalar>
struct MixedBatch {
  Tensor<Scalar> images;
  /// Untouched source labels; mixing never interpolates labels.
  std::vector<int> labels;
  std::vector<Index> partners;
};

/// Pairs every source sample with its most similar test sample (in softmax space) and mixes.
template <typename Scalar>
MixedBatch<Scalar> build_mixed_batch(const Tensor<Scalar>& source, std::span<const int> source_labels,
                                     const Matrix<Scalar>& source_softmax, const Tensor<Scalar>& test,
                                     const Matrix<Scalar>& test_softmax, double lambda) {
  if (source.empty() || test.empty()) throw ParameterError("build_mixed_batch: empty batch");
  if (static_cast<Index>(source_labels.size()) != source.batch() || source_softmax.rows() != source.batch() ||
      test_softmax.rows() != test.batch())
    throw ParameterError("build_mixed_batch: batch sizes disagree");
  MixedBatch<Scalar> out;
  out.images = Tensor<Scalar>(source.shape());
  out.labels.assign(source_labels.begin(), source_labels.end());
  out.partners.resize(static_cast<std::size_t>(source.batch()));
  for (Index j = 0; j < source.batch(); ++j) {
    const Index i = select_partner<Scalar>(source_softmax.row(j), test_softmax);
    out.partners[static_cast<std::size_t>(j)] = i;
    out.images.set_sample(j, mix_images(source, j, test, i, lambda), 0);
  }
  return out;
}

/// Same, computing both softmaxes with the model under its current BN mode.
template <typename Model, typename Scalar = typename Model::scalar_type>
MixedBatch<Scalar> build_mixed_batch(const Tensor<Scalar>& source, std::span<const int> source_labels,
                                     const Tensor<Scalar>& test, Model& model, const MixupConfig& config) {
  config.validate();
  const nn::ForwardOptions opts{.source_training = false, .commit_ema = false};
  const Matrix<Scalar> ps = model.predict_proba(source, opts);
  const Matrix<Scalar> pt = model.predict_proba(test, opts);
  return build_mixed_batch<Scalar>(source, source_labels, ps, test, pt, config.lambda);
}

}  // namespace gtta
