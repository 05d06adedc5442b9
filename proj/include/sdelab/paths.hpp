#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "sdelab/grid.hpp"
#include "sdelab/model.hpp"

namespace sdelab {

enum class Stepper { ito_equivalent, alpha_point };

std::string to_string(Stepper s);
Stepper stepper_from_string(const std::string& name);

struct BoundaryOutcome {
  StateVector x;
  bool absorbed = false;
};

// Reflecting axes fold the coordinate back (exact mirror images, iterated),
// periodic axes wrap, absorbing axes clamp to the wall and flag the path.
BoundaryOutcome apply_boundary(const SystemSpec& system, StateVector x);

// x + [a(x) + alpha a_nid(x)] dt + B(x) dW, then boundary handling.
StateVector step_ito_equivalent(const SystemSpec& system, double alpha, const StateVector& x,
                                const StateVector& dw, double dt);

// Predictor-corrector on the evaluation point:
// x + a(x) dt + B(x + alpha B(x) dW) dW, then boundary handling.
StateVector step_alpha_point(const SystemSpec& system, double alpha, const StateVector& x, const StateVector& dw,
                             double dt);

BoundaryOutcome advance(const SystemSpec& system, Stepper stepper, double alpha, const StateVector& x,
                        const StateVector& dw, double dt);

struct IntegralStatistics {
  double mean = 0.0;
  double variance = 0.0;
  double mean_se = 0.0;
  double variance_se = 0.0;
  Index n_samples = 0;
};

// Monte Carlo estimate of sum_j W(tau_j + alpha delta) [W(tau_{j+1}) - W(tau_j)]
// over n_sub pieces of [0, dt]. The interior value is drawn from the Brownian
// bridge between the partition points.
IntegralStatistics alpha_integral_experiment(double alpha, double dt, Index n_sub, Index n_samples,
                                             std::uint64_t seed, unsigned threads = 1);

using InitialCondition = std::variant<StateVector, DensityGrid>;

struct EnsembleOptions {
  double alpha = 1.0;
  Stepper stepper = Stepper::ito_equivalent;
  double dt = 1e-3;
  double t_end = 1.0;
  Index n_paths = 1000;
  std::uint64_t master_seed = 1;
  // Record a snapshot every this many steps; must divide the step count.
  Index record_every = 1;
  unsigned threads = 1;
};

struct PathEnsemble {
  Index n_paths = 0;
  Index dim = 0;
  double dt = 0.0;
  Index record_every = 1;
  std::vector<double> times;
  // snapshots[r](p, i): coordinate i of path p at times[r]
  std::vector<Eigen::MatrixXd> snapshots;
  // first step index at which the path was absorbed, -1 if never
  std::vector<std::int64_t> absorbed_step;
  double alpha = 0.0;
  Stepper stepper = Stepper::ito_equivalent;
  std::uint64_t master_seed = 0;
  std::vector<Boundary> boundaries;
  std::vector<std::string> warnings;

  // Snapshot index for time t; throws ConfigError if t is not on the grid.
  Index record_index(double t) const;
  bool absorbed_by(Index path, double t) const;
};

PathEnsemble simulate_ensemble(const SystemSpec& system, const InitialCondition& initial,
                               const EnsembleOptions& options);

struct AlphaConsistencyReport {
  StateVector x;
  double dt = 0.0;
  Index n_paths = 0;
  double alpha = 0.0;
  Stepper stepper = Stepper::ito_equivalent;
  StateVector empirical_mean_increment;
  StateVector standard_error;
  StateVector a_nid;
  // a(x) dt
  StateVector prediction_sde_premodel;
  // (a + alpha a_nid)(x) dt
  StateVector prediction_ito_form;
  // (a + (alpha - 1) a_nid)(x) dt
  StateVector prediction_paper_tot;
  // max_i |a_nid^i| dt / SE^i; the noise-induced drift is resolved when >= 10
  double nid_resolution = 0.0;
  bool resolvable = false;
};

AlphaConsistencyReport conditional_increment_report(const SystemSpec& system, double alpha, const StateVector& x,
                                                    double dt, Index n_paths, std::uint64_t seed,
                                                    Stepper stepper = Stepper::ito_equivalent, unsigned threads = 1);

// Smallest dt for which |a_nid| dt reaches 10 standard errors of the one-step
// mean with n_paths samples; +inf when a_nid(x) = 0.
double resolving_conditional_dt(const SystemSpec& system, const StateVector& x, Index n_paths);

struct MartingalePoint {
  double t = 0.0;
  StateVector mean_displacement;
  StateVector standard_error;
  double deviation = 0.0;  // ||E[X(t)] - x0||
  double deviation_se = 0.0;
};

struct MartingaleSeries {
  StateVector x0;
  StateVector a_nid_x0;
  double alpha = 0.0;
  Index n_paths = 0;
  std::vector<MartingalePoint> points;
};

// Mean displacement of pure-noise paths from x0 on the recorded time grid.
// The system drift must vanish identically.
MartingaleSeries martingale_deviation(const SystemSpec& system, double alpha, const StateVector& x0, double dt,
                                      double t_end, Index n_paths, std::uint64_t seed, Index record_every = 1,
                                      Stepper stepper = Stepper::ito_equivalent, unsigned threads = 1);

// Column means and standard errors of the rows of `samples`.
void mean_and_standard_error(const Eigen::MatrixXd& samples, Eigen::VectorXd& mean, Eigen::VectorXd& se);

}  // namespace sdelab
