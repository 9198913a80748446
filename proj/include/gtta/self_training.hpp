#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "gtta/errors.hpp"
#include "gtta/tensor.hpp"

namespace gtta {

template <typename Scalar>
struct PseudoLabelBatch {
  std::vector<int> labels;
  Vector<Scalar> confidences;
  /// Empty until filter_by_confidence runs; empty means every sample is kept.
  std::vector<bool> keep;

  Index size() const { return static_cast<Index>(labels.size()); }
  bool kept(Index i) const { return keep.empty() || keep[static_cast<std::size_t>(i)]; }
  Index kept_count() const {
    return keep.empty() ? size() : static_cast<Index>(std::count(keep.begin(), keep.end(), true));
  }
};

/// Argmax pseudo-labels with their max-probability confidences; ties go to the lowest class.
template <typename Scalar>
PseudoLabelBatch<Scalar> pseudo_labels(const Matrix<Scalar>& softmax) {
  PseudoLabelBatch<Scalar> out;
  out.labels = argmax_rows(softmax);
  out.confidences = softmax.rowwise().maxCoeff();
  return out;
}

struct ThresholdState {
  double gamma = 0.0;
  double alpha_th = 0.1;
  bool initialized = false;
};

/// gamma_t = (1 - a) gamma_{t-1} + a sqrt(mean_i max_c p_ic), evaluated as
/// gamma + a (stat - gamma) so a fixed point stays bit-exact. The first call takes the
/// statistic directly.
template <typename Scalar>
ThresholdState update_threshold(ThresholdState state, const Matrix<Scalar>& softmax) {
  if (softmax.rows() < 1) throw ParameterError("update_threshold: empty batch");
  double total = 0.0;
  for (Index i = 0; i < softmax.rows(); ++i) total += static_cast<double>(softmax.row(i).maxCoeff());
  const double stat = std::sqrt(total / static_cast<double>(softmax.rows()));
  if (!state.initialized) {
    state.gamma = stat;
    state.initialized = true;
  } else {
    state.gamma += state.alpha_th * (stat - state.gamma);
  }
  return state;
}

/// keep[i] = confidence[i] >= gamma.
template <typename Scalar>
PseudoLabelBatch<Scalar> filter_by_confidence(PseudoLabelBatch<Scalar> batch, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("filter_by_confidence: gamma must lie in [0,1]");
  batch.keep.assign(batch.labels.size(), false);
  for (Index i = 0; i < batch.size(); ++i)
    batch.keep[static_cast<std::size_t>(i)] = static_cast<double>(batch.confidences(i)) >= gamma;
  return batch;
}

inline constexpr double kLogClamp = 1e-12;

/// Mean cross-entropy over the counted samples, plus its gradient w.r.t. the logits that
/// produced the softmax.
template <typename Scalar>
struct CrossEntropy {
  double value = 0.0;
  bool skipped = false;
  Index count = 0;
  Matrix<Scalar> grad_logits;
};

namespace detail {
template <typename Scalar, typename Keep>
CrossEntropy<Scalar> masked_ce(std::span<const int> labels, const Matrix<Scalar>& softmax, Keep keep) {
  if (static_cast<Index>(labels.size()) != softmax.rows())
    throw ParameterError("cross-entropy: label count does not match batch size");
  CrossEntropy<Scalar> out;
  out.grad_logits = Matrix<Scalar>::Zero(softmax.rows(), softmax.cols());
  for (Index i = 0; i < softmax.rows(); ++i)
    if (keep(i)) ++out.count;
  if (out.count == 0) {
    out.skipped = true;
    return out;
  }
  const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(out.count));
  double total = 0.0;
  for (Index i = 0; i < softmax.rows(); ++i) {
    if (!keep(i)) continue;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= softmax.cols()) throw ParameterError("cross-entropy: label out of range");
    total -= std::log(std::max(static_cast<double>(softmax(i, y)), kLogClamp));
    out.grad_logits.row(i) = softmax.row(i) * inv;
    out.grad_logits(i, y) -= inv;
  }
  out.value = total / static_cast<double>(out.count);
  return out;
}
}  // namespace detail

/// Self-training loss on kept pseudo-labels. Zero kept samples gives skipped = true, value 0.
template <typename Scalar>
CrossEntropy<Scalar> ce_loss_test(const PseudoLabelBatch<Scalar>& pseudo, const Matrix<Scalar>& softmax) {
  return detail::masked_ce<Scalar>(pseudo.labels, softmax, [&](Index i) { return pseudo.kept(i); });
}

/// Supervised loss on ground-truth labels.
template <typename Scalar>
CrossEntropy<Scalar> ce_loss_source(std::span<const int> labels, const Matrix<Scalar>& softmax) {
  return detail::masked_ce<Scalar>(labels, softmax, [](Index) { return true; });
}

}  // namespace gtta
