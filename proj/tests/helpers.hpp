#pragma once

#include <cmath>
#include <random>

#include "gtta/tensor.hpp"

namespace gtta::testing {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + 17); }

/// Random probability rows; `sharp` scales the logits so some rows are peaked.
template <typename Scalar = double>
Matrix<Scalar> random_softmax(std::mt19937_64& gen, Index rows, Index cols, double sharp = 3.0) {
  std::normal_distribution<double> n(0.0, sharp);
  Matrix<Scalar> logits(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) logits(i, c) = static_cast<Scalar>(n(gen));
  return softmax_rows<Scalar>(logits);
}

template <typename Scalar = float>
Tensor<Scalar> random_tensor(std::mt19937_64& gen, Shape shape, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.data().size(); ++i) t.data().data()[i] = static_cast<Scalar>(u(gen));
  return t;
}

/// Channel moments of sample n computed the slow way, in double.
template <typename Scalar>
std::pair<double, double> plane_moments(const Tensor<Scalar>& t, Index n, Index c) {
  double s = 0.0;
  for (Index y = 0; y < t.height(); ++y)
    for (Index x = 0; x < t.width(); ++x) s += static_cast<double>(t(n, c, y, x));
  const double mean = s / static_cast<double>(t.plane());
  double v = 0.0;
  for (Index y = 0; y < t.height(); ++y)
    for (Index x = 0; x < t.width(); ++x) v += std::pow(static_cast<double>(t(n, c, y, x)) - mean, 2);
  return {mean, std::sqrt(v / static_cast<double>(t.plane()))};
}

}  // namespace gtta::testing
