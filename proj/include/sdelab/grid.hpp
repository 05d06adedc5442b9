#pragma once

#include <vector>

#include "sdelab/model.hpp"

namespace sdelab {

// Uniform cell-centred axis.
struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  Index cells = 1;

  double width() const { return (hi - lo) / static_cast<double>(cells); }
  double center(Index i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
  double face(Index i) const { return lo + static_cast<double>(i) * width(); }
  // Cell containing v, clamped; the upper wall belongs to the last cell.
  Index locate(double v) const;
};

// Rectangular grid, first axis fastest in the flattened index.
class GridGeometry {
 public:
  GridGeometry() = default;
  explicit GridGeometry(std::vector<Axis> axes);

  Index dim() const { return static_cast<Index>(axes_.size()); }
  const std::vector<Axis>& axes() const { return axes_; }
  const Axis& axis(Index d) const { return axes_[static_cast<std::size_t>(d)]; }
  Index size() const { return size_; }
  double cell_volume() const;
  Index stride(Index d) const { return strides_[static_cast<std::size_t>(d)]; }

  Index flat(const std::vector<Index>& idx) const;
  std::vector<Index> unflat(Index flat) const;
  StateVector center(Index flat) const;
  // Cell containing x, or -1 outside the grid box.
  Index locate(const StateVector& x) const;

  bool same_as(const GridGeometry& other, double tol = 1e-12) const;

 private:
  std::vector<Axis> axes_;
  std::vector<Index> strides_;
  Index size_ = 0;
};

// Per-axis cell counts over a box (the system domain unless overridden).
struct GridSpec {
  std::vector<Index> cells;
  // Optional explicit bounds; empty means "use the system domain".
  std::vector<double> lo;
  std::vector<double> hi;

  GridGeometry geometry(const Box& domain) const;
};

// Per-step mass accounting kept by the Fokker-Planck integrator.
struct MassLedger {
  Index steps = 0;
  double initial_mass = 0.0;
  double max_step_change = 0.0;
  double min_value = 0.0;
};

// Probability density at cell centres.
struct DensityGrid {
  GridGeometry geometry;
  Eigen::VectorXd w;
  double time = 0.0;
  MassLedger ledger;

  double total_mass() const;
  void normalize();
};

DensityGrid uniform_density(const GridGeometry& g);
// Normalized point mass at x0, shared between the nearest cell centres with
// linear weights (exact mean; a single cell when x0 is a centre).
DensityGrid point_density(const GridGeometry& g, const StateVector& x0);
// Normalized isotropic Gaussian sampled at cell centres.
DensityGrid gaussian_density(const GridGeometry& g, const StateVector& mean, double std_dev);

}  // namespace sdelab
