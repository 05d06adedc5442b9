#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sdelab/fpe.hpp"
#include "sdelab/grid.hpp"
#include "sdelab/model.hpp"

namespace sdelab {

using PointMap = std::function<StateVector(const StateVector&)>;
using JacobianField = std::function<NoiseMatrix(const StateVector&)>;

struct TransformDefinition {
  std::string name;
  Index dim = 1;
  PointMap forward;
  PointMap inverse;
  JacobianField jacobian;  // optional, dy/dx at x
  bool affine = false;     // constant Jacobian
};

// Diffeomorphism y = phi(x) between boxes.
class CoordinateTransform {
 public:
  explicit CoordinateTransform(TransformDefinition def);

  const std::string& name() const { return def_.name; }
  Index dim() const { return def_.dim; }
  bool affine() const { return def_.affine; }
  bool has_analytic_jacobian() const { return static_cast<bool>(def_.jacobian); }

  StateVector forward(const StateVector& x) const { return def_.forward(x); }
  StateVector inverse(const StateVector& y) const { return def_.inverse(y); }
  // dy/dx at x; central differences when no analytic Jacobian was supplied.
  NoiseMatrix jacobian(const StateVector& x) const;

  // Bounding box of the image of `box` (from its mapped corners).
  Box image(const Box& box) const;

  // Round trip within 1e-10 and |det J| > 1e-12 at every probe; throws
  // TransformError otherwise.
  void check(const std::vector<StateVector>& probes) const;

  const TransformDefinition& definition() const { return def_; }

 private:
  TransformDefinition def_;
};

CoordinateTransform identity_transform(Index dim);
CoordinateTransform affine_transform(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& offset);
// y_i = exp(x_i) on the selected axes, identity elsewhere.
CoordinateTransform exp_transform(Index dim, const std::vector<Index>& axes);
// y_i = log(x_i) on the selected axes.
CoordinateTransform log_transform(Index dim, const std::vector<Index>& axes);
// x -> outer(inner(x)).
CoordinateTransform compose(const CoordinateTransform& inner, const CoordinateTransform& outer);

// Named transforms for configs. Built-ins are constructed from parameters;
// user transforms are stored by name.
class TransformRegistry {
 public:
  void add(const CoordinateTransform& t);
  bool contains(const std::string& name) const { return entries_.contains(name); }
  const CoordinateTransform& get(const std::string& name) const;

 private:
  std::map<std::string, CoordinateTransform> entries_;
};

// Probe points for validating a transform: cell midpoints of a per_axis grid
// plus the corners (infinite bounds clamped to +-2).
std::vector<StateVector> domain_probes(const Box& box, Index per_axis = 5);

// Drift transforms as a contravariant vector and each noise column likewise:
// a'(y) = J a(x), B'(y) = J B(x), x = phi^{-1}(y); hence D' = J D J^T. No
// correction term is added to the drift.
SystemSpec transform_system(const SystemSpec& system, const CoordinateTransform& t);

// (a' + alpha a_nid')(phi(x)) - J(x) (a + alpha a_nid)(x); zero when the
// combined drift transforms contravariantly.
StateVector contravariance_violation(const SystemSpec& system, const CoordinateTransform& t, double alpha,
                                     const StateVector& x);

// Grid covering the image of the source grid box with the same cell counts.
GridGeometry image_geometry(const GridGeometry& source, const CoordinateTransform& t);

// w'(y) = w(phi^{-1}(y)) / |det J(phi^{-1}(y))|, sampled at the target cell
// centres (multilinear interpolation of w) and rescaled to the input mass.
// Throws ResolutionError when the sampled mass misses by more than 1e-3.
DensityGrid transform_density(const DensityGrid& grid, const CoordinateTransform& t);
DensityGrid transform_density(const DensityGrid& grid, const CoordinateTransform& t, const GridGeometry& target);

struct InvarianceParams {
  GridSpec grid;
  // initial density (unnormalized), sampled at x-grid cell centres
  std::function<double(const StateVector&)> initial;
  double t_end = 0.1;
  double safety = 0.4;
};

struct InvarianceReport {
  double alpha = 0.0;
  double l1_mismatch = 0.0;
  DensityGrid mapped_x_solution;  // transform_density(evolve in x)
  DensityGrid y_solution;         // evolve(transform_system, transform_density(initial))
};

InvarianceReport invariance_check(const SystemSpec& system, const CoordinateTransform& t, double alpha,
                                  const InvarianceParams& params);

struct InvarianceRefinement {
  InvarianceReport baseline;
  InvarianceReport refined;  // every axis with twice the cells
  double ratio = 0.0;        // baseline / refined mismatch
};

InvarianceRefinement invariance_refinement(const SystemSpec& system, const CoordinateTransform& t, double alpha,
                                           const InvarianceParams& params);

}  // namespace sdelab
