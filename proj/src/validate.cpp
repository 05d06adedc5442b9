#include "sdelab/validate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sdelab {

double HistogramDensity::mass() const { return density.sum() * geometry.cell_volume(); }

double HistogramDensity::counted_fraction() const {
  return n_paths > 0 ? static_cast<double>(n_counted) / static_cast<double>(n_paths) : 0.0;
}

DensityGrid HistogramDensity::as_density(bool unit_mass) const {
  DensityGrid g{geometry, density, t, {}};
  if (!unit_mass) g.w *= counted_fraction();
  return g;
}

HistogramDensity histogram(const Eigen::MatrixXd& points, const GridGeometry& geometry) {
  if (points.cols() != geometry.dim()) throw ConfigError("histogram: point dimension does not match the grid");
  HistogramDensity h;
  h.geometry = geometry;
  h.counts = Eigen::VectorXd::Zero(geometry.size());
  h.n_paths = points.rows();
  for (Index p = 0; p < points.rows(); ++p) {
    const StateVector x = points.row(p).transpose();
    const Index c = geometry.locate(x);
    if (c < 0) {
      ++h.n_outside;
      continue;
    }
    h.counts(c) += 1.0;
    ++h.n_counted;
  }
  const double vol = geometry.cell_volume();
  const double n = static_cast<double>(std::max<Index>(h.n_counted, 1));
  h.density = h.counts / (n * vol);
  h.std_error = (h.counts.array() * (1.0 - h.counts.array() / n)).cwiseMax(0.0).sqrt() / (n * vol);
  return h;
}

HistogramDensity histogram(const PathEnsemble& ensemble, double t, const GridGeometry& geometry) {
  const Index r = ensemble.record_index(t);
  const Eigen::MatrixXd& snap = ensemble.snapshots[static_cast<std::size_t>(r)];
  if (snap.cols() != geometry.dim()) throw ConfigError("histogram: ensemble dimension does not match the grid");

  Eigen::MatrixXd alive(snap.rows(), snap.cols());
  Index kept = 0;
  Index absorbed = 0;
  for (Index p = 0; p < snap.rows(); ++p) {
    if (ensemble.absorbed_by(p, ensemble.times[static_cast<std::size_t>(r)])) {
      ++absorbed;
      continue;
    }
    alive.row(kept++) = snap.row(p);
  }
  HistogramDensity h = histogram(Eigen::MatrixXd(alive.topRows(kept)), geometry);
  h.n_paths = snap.rows();
  h.n_absorbed = absorbed;
  h.t = ensemble.times[static_cast<std::size_t>(r)];
  return h;
}

double l1_distance(const DensityGrid& p, const DensityGrid& q) {
  if (!p.geometry.same_as(q.geometry)) throw ConfigError("l1_distance: densities live on different grids");
  return (p.w - q.w).cwiseAbs().sum() * p.geometry.cell_volume();
}

double ks_statistic(std::vector<double> samples, const DensityGrid& density) {
  if (density.geometry.dim() != 1) throw ConfigError("ks_statistic: 1D densities only");
  if (samples.empty()) throw ConfigError("ks_statistic: no samples");
  std::sort(samples.begin(), samples.end());
  const Axis& ax = density.geometry.axis(0);
  const double h = ax.width();
  const double total = density.w.sum() * h;
  if (!(total > 0.0)) throw ConfigError("ks_statistic: reference density has no mass");

  std::vector<double> cdf_at_face(static_cast<std::size_t>(ax.cells) + 1, 0.0);
  for (Index i = 0; i < ax.cells; ++i) {
    cdf_at_face[static_cast<std::size_t>(i) + 1] = cdf_at_face[static_cast<std::size_t>(i)] + density.w(i) * h / total;
  }
  auto cdf = [&](double v) {
    if (v <= ax.lo) return 0.0;
    if (v >= ax.hi) return 1.0;
    const Index i = ax.locate(v);
    const double frac = (v - ax.face(i)) / h;
    const double lo = cdf_at_face[static_cast<std::size_t>(i)];
    return lo + frac * (cdf_at_face[static_cast<std::size_t>(i) + 1] - lo);
  };
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double f = cdf(samples[k]);
    d = std::max({d, static_cast<double>(k + 1) / n - f, f - static_cast<double>(k) / n});
  }
  return d;
}

Eigen::VectorXd bin_z_scores(const Eigen::VectorXd& counts, Index n_paths, const DensityGrid& reference) {
  if (counts.size() != reference.geometry.size()) throw ConfigError("bin_z_scores: size mismatch");
  const double n = static_cast<double>(n_paths);
  const double vol = reference.geometry.cell_volume();
  Eigen::VectorXd z(counts.size());
  for (Index c = 0; c < counts.size(); ++c) {
    const double p = std::clamp(reference.w(c) * vol, 0.0, 1.0);
    const double diff = counts(c) / n - p;
    const double se = std::sqrt(p * (1.0 - p) / n);
    if (se > 0.0) {
      z(c) = diff / se;
    } else {
      z(c) = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    }
  }
  return z;
}

CrossValidationReport cross_validate(const SystemSpec& system, double alpha, const InitialCondition& initial,
                                     double t_end, const MonteCarloParams& mc, const GridSpec& grid) {
  if (!(t_end > 0.0)) throw ConfigError("cross_validate: t_end must be positive");
  const GridGeometry geometry = grid.geometry(system.domain());

  DensityGrid w0;
  if (const auto* x0 = std::get_if<StateVector>(&initial)) {
    w0 = point_density(geometry, *x0);
  } else {
    w0 = std::get<DensityGrid>(initial);
    if (!w0.geometry.same_as(geometry)) throw ConfigError("cross_validate: initial density must use the comparison grid");
  }

  EnsembleOptions opt;
  opt.alpha = alpha;
  opt.stepper = mc.stepper;
  opt.dt = mc.dt;
  opt.t_end = t_end;
  opt.n_paths = mc.n_paths;
  opt.master_seed = mc.seed;
  opt.threads = mc.threads;
  const Index steps = static_cast<Index>(std::llround(t_end / mc.dt));
  opt.record_every = std::max<Index>(steps, 1);
  const PathEnsemble ens = simulate_ensemble(system, initial, opt);

  const FokkerPlanckOperator op(system, alpha, geometry);

  CrossValidationReport r;
  r.alpha = alpha;
  r.t_end = t_end;
  r.warnings = ens.warnings;
  r.histogram = histogram(ens, t_end, geometry);
  r.fpe = evolve_for(op, w0, t_end);
  r.fpe_mass = r.fpe.total_mass();
  r.absorbed_fraction = static_cast<double>(r.histogram.n_absorbed) / static_cast<double>(ens.n_paths);

  r.l1 = l1_distance(r.histogram.as_density(false), r.fpe);
  r.z = bin_z_scores(r.histogram.counts, ens.n_paths, r.fpe);
  r.max_abs_z = r.z.cwiseAbs().maxCoeff();
  r.fraction_z_above_3 = static_cast<double>((r.z.cwiseAbs().array() > 3.0).count()) / static_cast<double>(r.z.size());
  if (geometry.dim() == 1) {
    const Index rec = ens.record_index(t_end);
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(ens.n_paths));
    for (Index p = 0; p < ens.n_paths; ++p) {
      if (!ens.absorbed_by(p, t_end)) samples.push_back(ens.snapshots[static_cast<std::size_t>(rec)](p, 0));
    }
    r.ks = samples.empty() ? std::numeric_limits<double>::quiet_NaN() : ks_statistic(std::move(samples), r.fpe);
  } else {
    r.ks = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace sdelab
