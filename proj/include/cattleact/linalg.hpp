#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "cattleact/types.hpp"

namespace cattleact {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// D-dimensional latent vector; the shared currency of the action and
/// interaction spaces.
using Embedding = Eigen::VectorXd;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size())
    throw Error(Error::Code::DimensionMismatch, std::string(what) + ": dimension mismatch");
}

/// log(sum_i exp(x_i)) with max subtraction.
inline double log_sum_exp(const Vec& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

inline Vec softmax(const Vec& x) {
  const double m = x.maxCoeff();
  Vec e = (x.array() - m).exp();
  return e / e.sum();
}

}  // namespace cattleact
