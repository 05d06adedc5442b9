#pragma once

#include <Eigen/Dense>

namespace sdelab {

using Eigen::Index;

// State and noise dimensions are small; fixed upper bounds keep per-step
// coefficient evaluations off the heap.
inline constexpr int kMaxDim = 4;

template <typename Scalar>
using StateVectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

template <typename Scalar>
using NoiseMatrixT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

using StateVector = StateVectorT<double>;
using NoiseMatrix = NoiseMatrixT<double>;

inline StateVector make_state(std::initializer_list<double> values) {
  StateVector x(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) x(i++) = v;
  return x;
}

}  // namespace sdelab
