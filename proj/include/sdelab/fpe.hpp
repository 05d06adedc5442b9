#pragma once

#include <vector>

#include <Eigen/Sparse>

#include "sdelab/grid.hpp"
#include "sdelab/model.hpp"

namespace sdelab {

// Probability current J = v w - (1/2) D grad w on the faces of a grid, with
// v = a + alpha a_nid - (1/2) div D. Where a_nid = (1/2) div D (symmetric
// noise) v reduces to the total drift a + (alpha - 1) a_nid.
struct CurrentField {
  GridGeometry geometry;
  double alpha = 0.0;
  std::vector<Boundary> boundaries;
  // face_flux[d](f): flux through face f normal to axis d; faces along d are
  // numbered 0..cells_d, the other coordinates follow the cell numbering.
  std::vector<Eigen::VectorXd> face_flux;
  // cell-averaged current, one column per axis
  Eigen::MatrixXd cell;
};

// Bernoulli function z / (e^z - 1).
double bernoulli(double z);

// Finite-volume discretization of the Fokker-Planck operator for one system,
// alpha and grid. Face fluxes use Scharfetter-Gummel weighting of the drift
// against the normal diffusion, which keeps the operator an M-matrix for
// diagonal D; off-diagonal D enters through centred cross-gradients.
class FokkerPlanckOperator {
 public:
  FokkerPlanckOperator(const SystemSpec& system, double alpha, GridGeometry geometry);

  const GridGeometry& geometry() const { return geometry_; }
  double alpha() const { return alpha_; }
  bool closed() const;

  CurrentField current(const Eigen::VectorXd& w) const;
  // L w = -div J, computed from the same face fluxes as current().
  Eigen::VectorXd apply(const Eigen::VectorXd& w) const;
  // Assembled L.
  const Eigen::SparseMatrix<double>& matrix() const { return matrix_; }

  // safety * min over faces of (dx^2 / D_dd, dx / |v|), further capped so the
  // explicit step keeps every diagonal entry of I + dt L nonnegative.
  double max_stable_dt(double safety = 0.4) const;
  double max_outflow_rate() const { return max_outflow_; }

  // Faces indexing helpers.
  Index face_count(Index axis) const;
  Index face_index(Index axis, const std::vector<Index>& idx) const;

 private:
  struct Term {
    Index cell;
    double coef;
  };
  struct FaceStencil {
    std::vector<Term> terms;
  };

  void build(const SystemSpec& system);

  GridGeometry geometry_;
  double alpha_;
  std::vector<Boundary> boundaries_;
  std::vector<std::vector<FaceStencil>> faces_;  // per axis
  Eigen::SparseMatrix<double> matrix_;
  double cfl_diffusion_ = 0.0;  // min dx^2 / D_dd
  double cfl_drift_ = 0.0;      // min dx / |v|
  double max_outflow_ = 0.0;
};

Eigen::VectorXd apply_operator(const SystemSpec& system, double alpha, const DensityGrid& grid);
CurrentField current(const SystemSpec& system, double alpha, const DensityGrid& grid);
Eigen::VectorXd divergence(const CurrentField& j);

// Per cell, the average over its faces of (face gradient of w) . (face flux),
// summed over axes. Nonpositive for pure diffusion with diagonal D.
Eigen::VectorXd gradient_current_product(const DensityGrid& grid, const CurrentField& j);

// Explicit Euler in time. Throws StepSizeError (with a suggested dt) when dt
// exceeds max_stable_dt, SolverError if nonnegativity is lost.
DensityGrid evolve(const SystemSpec& system, double alpha, const DensityGrid& grid, double dt, Index n_steps);
DensityGrid evolve(const FokkerPlanckOperator& op, const DensityGrid& grid, double dt, Index n_steps);

// Evolves to time grid.time + duration with the largest stable uniform step.
DensityGrid evolve_for(const FokkerPlanckOperator& op, const DensityGrid& grid, double duration, double safety = 0.4);

// Solves L w = 0 with sum(w) * cell_volume = 1. Requires closed boundaries.
DensityGrid stationary(const SystemSpec& system, double alpha, const GridSpec& spec);
DensityGrid stationary(const FokkerPlanckOperator& op);

// max |L w| over cells.
double operator_residual(const FokkerPlanckOperator& op, const Eigen::VectorXd& w);

// Direct discretization of the Ito-form operator
//   sum_i d_i [ -(a^i + alpha a_nid^i) w + (1/2) sum_k d_k (D^{ik} w) ]
// with centred differences. Cells within two of a wall are NaN.
Eigen::VectorXd apply_operator_expanded(const SystemSpec& system, double alpha, const DensityGrid& grid);

}  // namespace sdelab
