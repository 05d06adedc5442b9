#pragma once

#include <cstdint>

#include "sdelab/fpe.hpp"
#include "sdelab/grid.hpp"
#include "sdelab/paths.hpp"

namespace sdelab {

// Binned ensemble at one recorded time. Absorbed paths and paths outside the
// grid box are counted separately and excluded from the density.
struct HistogramDensity {
  GridGeometry geometry;
  Eigen::VectorXd counts;
  // counts / (n_counted * cell_volume); unit mass
  Eigen::VectorXd density;
  // sqrt(count (1 - count / n_counted)) / (n_counted * cell_volume)
  Eigen::VectorXd std_error;
  Index n_paths = 0;
  Index n_counted = 0;
  Index n_absorbed = 0;
  Index n_outside = 0;
  double t = 0.0;

  double mass() const;
  // Fraction of all paths that were binned.
  double counted_fraction() const;
  // density scaled to counted_fraction(): the mass that survives, as a grid
  DensityGrid as_density(bool unit_mass = true) const;
};

HistogramDensity histogram(const PathEnsemble& ensemble, double t, const GridGeometry& geometry);
HistogramDensity histogram(const Eigen::MatrixXd& points, const GridGeometry& geometry);

// sum |p - q| * cell_volume on a shared grid.
double l1_distance(const DensityGrid& p, const DensityGrid& q);

// Kolmogorov-Smirnov distance between the empirical CDF of 1D samples and the
// CDF of a cell-constant density (piecewise linear).
double ks_statistic(std::vector<double> samples, const DensityGrid& density);

// Per-bin z-scores of binned counts against cell masses p = w * vol, using the
// binomial standard error sqrt(p (1 - p) / n_paths).
Eigen::VectorXd bin_z_scores(const Eigen::VectorXd& counts, Index n_paths, const DensityGrid& reference);

struct MonteCarloParams {
  Index n_paths = 100000;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  Stepper stepper = Stepper::ito_equivalent;
  unsigned threads = 1;
};

struct CrossValidationReport {
  double alpha = 0.0;
  double t_end = 0.0;
  HistogramDensity histogram;
  DensityGrid fpe;
  double l1 = 0.0;
  double ks = 0.0;  // NaN in 2D
  Eigen::VectorXd z;
  double max_abs_z = 0.0;
  double fraction_z_above_3 = 0.0;
  double absorbed_fraction = 0.0;
  double fpe_mass = 0.0;
  std::vector<std::string> warnings;
};

// Simulates the ensemble and evolves the matching FPE at the same alpha, then
// compares them at t_end. A point start enters the FPE as point_density.
CrossValidationReport cross_validate(const SystemSpec& system, double alpha, const InitialCondition& initial,
                                     double t_end, const MonteCarloParams& mc, const GridSpec& grid);

}  // namespace sdelab
