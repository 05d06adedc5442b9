#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "sdelab/errors.hpp"
#include "sdelab/types.hpp"

namespace sdelab {

enum class Boundary { reflecting, absorbing, periodic, open };

std::string to_string(Boundary b);
Boundary boundary_from_string(const std::string& name);

// Axis-aligned box. Infinite bounds are allowed on `open` axes.
struct Box {
  StateVector lo;
  StateVector hi;

  Index dim() const { return lo.size(); }
  bool contains(const StateVector& x) const;
  bool finite() const;
  // Largest finite edge length, or 1 if no axis is bounded.
  double scale() const;
};

using DriftField = std::function<StateVector(const StateVector&)>;
using NoiseField = std::function<NoiseMatrix(const StateVector&)>;
// (i, m) entry is da^i/dx^m.
using DriftJacobianField = std::function<NoiseMatrix(const StateVector&)>;
// Returns dB/dx^axis.
using NoiseDerivativeField = std::function<NoiseMatrix(const StateVector&, Index axis)>;

// Everything needed to construct a SystemSpec. Derivative fields are optional.
struct SystemDefinition {
  std::string name;
  std::string description;
  Index dim = 1;
  Index noise_dim = 1;
  DriftField drift;
  NoiseField noise;
  DriftJacobianField drift_jacobian;
  NoiseDerivativeField noise_derivative;
  Box domain;
  std::vector<Boundary> boundary;
};

// dX = a(X) dt + B(X) dW with an unspecified evaluation point. Immutable once
// constructed; the coefficient closures must be safe to call concurrently.
class SystemSpec {
 public:
  explicit SystemSpec(SystemDefinition def);

  const std::string& name() const { return def_.name; }
  const std::string& description() const { return def_.description; }
  Index dim() const { return def_.dim; }
  Index noise_dim() const { return def_.noise_dim; }
  const Box& domain() const { return def_.domain; }
  const std::vector<Boundary>& boundary() const { return def_.boundary; }
  Boundary boundary(Index axis) const { return def_.boundary[static_cast<std::size_t>(axis)]; }
  bool closed() const;  // every axis reflecting or periodic

  bool has_drift_jacobian() const { return static_cast<bool>(def_.drift_jacobian); }
  bool has_noise_derivative() const { return static_cast<bool>(def_.noise_derivative); }

  // Raw field access; no domain or finiteness checks.
  StateVector drift(const StateVector& x) const { return def_.drift(x); }
  NoiseMatrix noise(const StateVector& x) const { return def_.noise(x); }

  const SystemDefinition& definition() const { return def_; }

  // Same system with the analytic derivative fields dropped.
  SystemSpec with_finite_differences() const;

 private:
  SystemDefinition def_;
};

// Central-difference step used for every numerical derivative in the library.
inline double fd_step(double xi) { return 1e-5 * (1.0 + std::abs(xi)); }

struct EvaluatedCoefficients {
  StateVector x;
  StateVector a;
  NoiseMatrix b;
  NoiseMatrix d;
  StateVector a_nid;
  StateVector a_tot;
  double alpha = 0.0;
};

// Checked field evaluation: throws DomainError outside the closed domain and
// EvaluationError on non-finite values.
StateVector checked_drift(const SystemSpec& system, const StateVector& x);
NoiseMatrix checked_noise(const SystemSpec& system, const StateVector& x);

// dB/dx^axis, analytic when supplied, central differences otherwise.
NoiseMatrix noise_derivative(const SystemSpec& system, const StateVector& x, Index axis);
// da^i/dx^m.
NoiseMatrix drift_jacobian(const SystemSpec& system, const StateVector& x);

// a_nid^i = sum_{k,m} (d b^{ik} / d x^m) b^{mk}.
StateVector noise_induced_drift(const SystemSpec& system, const StateVector& x);

template <typename Derived>
NoiseMatrixT<typename Derived::Scalar> diffusion_matrix(const Eigen::MatrixBase<Derived>& b) {
  return b * b.transpose();
}

NoiseMatrix diffusion(const SystemSpec& system, const StateVector& x);

// (1/2) sum_k dD^{ik}/dx^k. Uses the analytic noise derivative when present
// (dD = dB B^T + B dB^T), central differences of D otherwise.
StateVector half_diffusion_divergence(const SystemSpec& system, const StateVector& x);

// Same quantity, always by central differences of the field D(x); the stencil
// must stay inside the closed domain.
StateVector half_diffusion_divergence_fd(const SystemSpec& system, const StateVector& x);

EvaluatedCoefficients evaluate(const SystemSpec& system, const StateVector& x, double alpha);

// a_nid(x) - (1/2) div D(x). Zero in 1D, for diagonal B(x) and for any of
// these times a constant orthogonal matrix. Pointwise symmetry of B is not
// enough in general.
StateVector nid_identity_residual(const SystemSpec& system, const StateVector& x);

template <typename Scalar>
struct SymmetrizationResultT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> b_star;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> o;
  bool padded = false;
};
using SymmetrizationResult = SymmetrizationResultT<double>;

// Polar factorization b = b_star * o^T with b_star symmetric PSD and o
// orthogonal, so that b * o = b_star and b_star b_star^T = b b^T. A tall input
// (fewer columns than rows) is completed to square with zero columns; a wide
// input is rejected.
template <typename Derived>
SymmetrizationResultT<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& b) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (!b.allFinite()) throw EvaluationError("symmetrize: non-finite matrix entry");
  if (b.rows() == 0) throw ConfigError("symmetrize: empty matrix");
  if (b.cols() > b.rows()) {
    throw ConfigError("symmetrize: noise matrix has more columns than rows; zero-row completion is not performed");
  }
  SymmetrizationResultT<Scalar> out;
  Mat square = Mat::Zero(b.rows(), b.rows());
  square.leftCols(b.cols()) = b;
  out.padded = b.cols() < b.rows();

  Eigen::JacobiSVD<Mat> svd(square, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat& u = svd.matrixU();
  const Mat& v = svd.matrixV();
  out.o = v * u.transpose();
  out.b_star = u * svd.singularValues().asDiagonal() * u.transpose();
  // Exact symmetry; the two triangles differ only by rounding.
  out.b_star = (0.5 * (out.b_star + out.b_star.transpose())).eval();
  return out;
}

// System with noise field x -> B(x) * o. Same diffusion, hence the same law.
SystemSpec rotate_noise(const SystemSpec& system, const Eigen::MatrixXd& o);

struct OrientationVariation {
  Eigen::MatrixXd reference;  // o at the first probe
  double max_deviation = 0.0;  // max_probe ||o(x) - reference||_max
  bool constant = true;
};

// Symmetrizes B pointwise at each probe and reports whether o varies.
OrientationVariation symmetrization_orientation(const SystemSpec& system,
                                                const std::vector<StateVector>& probes,
                                                double tolerance = 1e-8);

}  // namespace sdelab
