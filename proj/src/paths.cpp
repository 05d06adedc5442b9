#include "sdelab/paths.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "parallel.hpp"
#include "sdelab/random.hpp"

namespace sdelab {

std::string to_string(Stepper s) {
  switch (s) {
    case Stepper::ito_equivalent: return "ito-equivalent";
    case Stepper::alpha_point: return "alpha-point";
  }
  return "unknown";
}

Stepper stepper_from_string(const std::string& name) {
  if (name == "ito-equivalent") return Stepper::ito_equivalent;
  if (name == "alpha-point") return Stepper::alpha_point;
  throw ConfigError("unknown stepper '" + name + "' (expected ito-equivalent or alpha-point)");
}

namespace {

double fold(double v, double lo, double hi) {
  const double width = hi - lo;
  double y = std::fmod(v - lo, 2.0 * width);
  if (y < 0.0) y += 2.0 * width;
  if (y > width) y = 2.0 * width - y;
  return lo + y;
}

double wrap(double v, double lo, double hi) {
  const double width = hi - lo;
  double y = std::fmod(v - lo, width);
  if (y < 0.0) y += width;
  // fmod can round up to exactly `width`
  if (y >= width) y = 0.0;
  return lo + y;
}

// Fold/wrap only; used for predictor points which must not absorb.
StateVector contain(const SystemSpec& system, StateVector x) {
  const Box& box = system.domain();
  for (Index i = 0; i < x.size(); ++i) {
    switch (system.boundary(i)) {
      case Boundary::reflecting:
        if (x(i) < box.lo(i) || x(i) > box.hi(i)) x(i) = fold(x(i), box.lo(i), box.hi(i));
        break;
      case Boundary::periodic:
        if (x(i) < box.lo(i) || x(i) >= box.hi(i)) x(i) = wrap(x(i), box.lo(i), box.hi(i));
        break;
      case Boundary::absorbing:
        x(i) = std::clamp(x(i), box.lo(i), box.hi(i));
        break;
      case Boundary::open:
        break;
    }
  }
  return x;
}

void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
}

}  // namespace

BoundaryOutcome apply_boundary(const SystemSpec& system, StateVector x) {
  BoundaryOutcome out;
  const Box& box = system.domain();
  for (Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x(i))) {
      out.x = x;
      return out;
    }
    if (system.boundary(i) == Boundary::absorbing && (x(i) <= box.lo(i) || x(i) >= box.hi(i))) {
      out.absorbed = true;
    }
  }
  out.x = contain(system, std::move(x));
  return out;
}

namespace {

StateVector ito_equivalent_raw(const SystemSpec& system, double alpha, const StateVector& x, const StateVector& dw,
                               double dt) {
  const StateVector a = checked_drift(system, x);
  const NoiseMatrix b = checked_noise(system, x);
  StateVector next = x + a * dt + b * dw;
  if (alpha != 0.0) {
    StateVector a_nid = StateVector::Zero(system.dim());
    for (Index m = 0; m < system.dim(); ++m) a_nid.noalias() += noise_derivative(system, x, m) * b.row(m).transpose();
    next += alpha * dt * a_nid;
  }
  return next;
}

StateVector alpha_point_raw(const SystemSpec& system, double alpha, const StateVector& x, const StateVector& dw,
                            double dt) {
  const StateVector a = checked_drift(system, x);
  const NoiseMatrix b = checked_noise(system, x);
  if (alpha == 0.0) return StateVector(x + a * dt + b * dw);
  const StateVector noise_step = b * dw;
  const StateVector eval_point = contain(system, StateVector(x + alpha * noise_step));
  return StateVector(x + a * dt + checked_noise(system, eval_point) * dw);
}

}  // namespace

StateVector step_ito_equivalent(const SystemSpec& system, double alpha, const StateVector& x, const StateVector& dw,
                                double dt) {
  require_alpha(alpha);
  return apply_boundary(system, ito_equivalent_raw(system, alpha, x, dw, dt)).x;
}

StateVector step_alpha_point(const SystemSpec& system, double alpha, const StateVector& x, const StateVector& dw,
                             double dt) {
  require_alpha(alpha);
  return apply_boundary(system, alpha_point_raw(system, alpha, x, dw, dt)).x;
}

BoundaryOutcome advance(const SystemSpec& system, Stepper stepper, double alpha, const StateVector& x,
                        const StateVector& dw, double dt) {
  if (stepper == Stepper::ito_equivalent) return apply_boundary(system, ito_equivalent_raw(system, alpha, x, dw, dt));
  return apply_boundary(system, alpha_point_raw(system, alpha, x, dw, dt));
}

IntegralStatistics alpha_integral_experiment(double alpha, double dt, Index n_sub, Index n_samples,
                                             std::uint64_t seed, unsigned threads) {
  require_alpha(alpha);
  if (!(dt > 0.0)) throw ConfigError("alpha-integral: dt must be positive");
  if (n_sub < 100) throw ConfigError("alpha-integral: n_sub must be at least 100");
  if (n_samples < 10000) throw ConfigError("alpha-integral: n_samples must be at least 1e4");

  const double delta = dt / static_cast<double>(n_sub);
  const double sqrt_delta = std::sqrt(delta);
  const double bridge_sd = std::sqrt(alpha * (1.0 - alpha) * delta);
  Eigen::VectorXd values(n_samples);

  detail::parallel_for(n_samples, threads, [&](Index begin, Index end) {
    for (Index s = begin; s < end; ++s) {
      RandomStream increments(seed, static_cast<std::uint64_t>(s), Substream::wiener);
      RandomStream bridge(seed, static_cast<std::uint64_t>(s), Substream::bridge);
      double w = 0.0;
      double sum = 0.0;
      for (Index j = 0; j < n_sub; ++j) {
        const double dw = sqrt_delta * increments.normal();
        // W at tau_j + alpha delta given both endpoints of the piece
        const double w_mid = w + alpha * dw + bridge_sd * bridge.normal();
        sum += w_mid * dw;
        w += dw;
      }
      values(s) = sum;
    }
  });

  IntegralStatistics st;
  st.n_samples = n_samples;
  const double n = static_cast<double>(n_samples);
  st.mean = values.mean();
  const Eigen::ArrayXd centered = values.array() - st.mean;
  const double m2 = centered.square().sum() / n;
  const double m4 = centered.square().square().sum() / n;
  st.variance = m2 * n / (n - 1.0);
  st.mean_se = std::sqrt(st.variance / n);
  st.variance_se = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
  return st;
}

Index PathEnsemble::record_index(double t) const {
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  for (std::size_t r = 0; r < times.size(); ++r) {
    if (std::abs(times[r] - t) <= tol) return static_cast<Index>(r);
  }
  std::ostringstream os;
  os << "time " << t << " is not on the ensemble time grid (no interpolation is performed)";
  throw ConfigError(os.str());
}

bool PathEnsemble::absorbed_by(Index path, double t) const {
  const std::int64_t s = absorbed_step[static_cast<std::size_t>(path)];
  return s >= 0 && static_cast<double>(s) * dt <= t + 1e-12 * std::max(1.0, t);
}

namespace {

// Initial state for path p: the fixed point, or a draw from the
// piecewise-constant density (cell by inverse CDF, uniform inside the cell).
class InitialSampler {
 public:
  InitialSampler(const SystemSpec& system, const InitialCondition& initial) : initial_(initial) {
    if (const auto* x0 = std::get_if<StateVector>(&initial_)) {
      if (x0->size() != system.dim()) throw ConfigError("initial point has the wrong dimension");
      if (!system.domain().contains(*x0)) throw DomainError("initial point lies outside the system domain");
    } else {
      const auto& g = std::get<DensityGrid>(initial_);
      if (g.geometry.dim() != system.dim()) throw ConfigError("initial density has the wrong dimension");
      if ((g.w.array() < 0.0).any()) throw ConfigError("initial density has negative values");
      cdf_.resize(static_cast<std::size_t>(g.w.size()));
      double acc = 0.0;
      for (Index c = 0; c < g.w.size(); ++c) cdf_[static_cast<std::size_t>(c)] = (acc += g.w(c));
      if (!(acc > 0.0)) throw ConfigError("initial density has zero mass");
      for (double& v : cdf_) v /= acc;
    }
  }

  StateVector sample(std::uint64_t seed, Index path) const {
    if (const auto* x0 = std::get_if<StateVector>(&initial_)) return *x0;
    const auto& g = std::get<DensityGrid>(initial_).geometry;
    RandomStream rng(seed, static_cast<std::uint64_t>(path), Substream::initial);
    const double u = rng.uniform();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    const Index cell = std::min<Index>(static_cast<Index>(it - cdf_.begin()), g.size() - 1);
    const auto idx = g.unflat(cell);
    StateVector x(g.dim());
    for (Index d = 0; d < g.dim(); ++d) {
      const Axis& ax = g.axis(d);
      x(d) = ax.face(idx[static_cast<std::size_t>(d)]) + rng.uniform() * ax.width();
    }
    return x;
  }

  std::vector<StateVector> probes(const SystemSpec& system) const {
    std::vector<StateVector> out;
    if (const auto* x0 = std::get_if<StateVector>(&initial_)) {
      out.push_back(*x0);
      return out;
    }
    const auto& g = std::get<DensityGrid>(initial_);
    for (Index c = 0; c < g.w.size(); ++c) {
      if (g.w(c) > 0.0 && system.domain().contains(g.geometry.center(c))) out.push_back(g.geometry.center(c));
    }
    return out;
  }

 private:
  const InitialCondition& initial_;
  std::vector<double> cdf_;
};

}  // namespace

PathEnsemble simulate_ensemble(const SystemSpec& system, const InitialCondition& initial,
                               const EnsembleOptions& options) {
  require_alpha(options.alpha);
  if (!(options.dt > 0.0) || !(options.t_end > 0.0)) throw ConfigError("ensemble: dt and t_end must be positive");
  if (options.n_paths < 1) throw ConfigError("ensemble: n_paths must be positive");
  const auto n_steps = static_cast<Index>(std::llround(options.t_end / options.dt));
  if (n_steps < 1 || std::abs(static_cast<double>(n_steps) * options.dt - options.t_end) > 1e-9 * options.t_end) {
    throw ConfigError("ensemble: t_end must be an integer multiple of dt");
  }
  const Index every = options.record_every;
  if (every < 1 || n_steps % every != 0) {
    throw ConfigError("ensemble: record_every must divide the number of steps (" + std::to_string(n_steps) + ")");
  }

  InitialSampler sampler(system, initial);
  PathEnsemble ens;
  ens.n_paths = options.n_paths;
  ens.dim = system.dim();
  ens.dt = options.dt;
  ens.record_every = every;
  ens.alpha = options.alpha;
  ens.stepper = options.stepper;
  ens.master_seed = options.master_seed;
  ens.boundaries = system.boundary();
  const Index n_records = n_steps / every + 1;
  for (Index r = 0; r < n_records; ++r) {
    ens.times.push_back(static_cast<double>(r * every) * options.dt);
    ens.snapshots.emplace_back(options.n_paths, system.dim());
  }
  ens.absorbed_step.assign(static_cast<std::size_t>(options.n_paths), -1);

  // step-size sanity against the domain scale
  const double scale = system.domain().scale();
  double max_drift = 0.0, max_noise = 0.0;
  for (const auto& p : sampler.probes(system)) {
    const auto c = evaluate(system, p, options.alpha);
    max_drift = std::max(max_drift, (c.a + options.alpha * c.a_nid).cwiseAbs().maxCoeff());
    max_noise = std::max(max_noise, Eigen::MatrixXd(c.b).norm());
  }
  if (options.dt * max_drift > 0.1 * scale) {
    ens.warnings.push_back("dt * max|drift| exceeds 10% of the domain scale");
  }
  if (std::sqrt(options.dt) * max_noise > 0.1 * scale) {
    ens.warnings.push_back("sqrt(dt) * max||B|| exceeds 10% of the domain scale");
  }

  const double blowup = 1e6 * scale;
  detail::parallel_for(options.n_paths, options.threads, [&](Index begin, Index end) {
    for (Index p = begin; p < end; ++p) {
      StateVector x = sampler.sample(options.master_seed, p);
      WienerIncrements wiener(options.master_seed, static_cast<std::uint64_t>(p), system.noise_dim(), options.dt);
      ens.snapshots[0].row(p) = x.transpose();
      bool absorbed = false;
      for (Index s = 1; s <= n_steps; ++s) {
        const StateVector dw = wiener.next();
        if (!absorbed) {
          const BoundaryOutcome out = advance(system, options.stepper, options.alpha, x, dw, options.dt);
          if (!out.x.allFinite() || out.x.cwiseAbs().maxCoeff() > blowup) {
            throw DivergenceError("ensemble diverged on path " + std::to_string(p) + " at step " + std::to_string(s),
                                  p, s);
          }
          x = out.x;
          if (out.absorbed) {
            absorbed = true;
            ens.absorbed_step[static_cast<std::size_t>(p)] = s;
          }
        }
        if (s % every == 0) ens.snapshots[static_cast<std::size_t>(s / every)].row(p) = x.transpose();
      }
    }
  });
  return ens;
}

void mean_and_standard_error(const Eigen::MatrixXd& samples, Eigen::VectorXd& mean, Eigen::VectorXd& se) {
  const double n = static_cast<double>(samples.rows());
  mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  const Eigen::VectorXd var = centered.array().square().colwise().sum().transpose() / std::max(n - 1.0, 1.0);
  se = (var / n).cwiseSqrt();
}

AlphaConsistencyReport conditional_increment_report(const SystemSpec& system, double alpha, const StateVector& x,
                                                    double dt, Index n_paths, std::uint64_t seed, Stepper stepper,
                                                    unsigned threads) {
  require_alpha(alpha);
  if (!(dt > 0.0)) throw ConfigError("conditional-increment: dt must be positive");
  if (n_paths < 2) throw ConfigError("conditional-increment: n_paths must be at least 2");
  const auto c = evaluate(system, x, alpha);

  Eigen::MatrixXd increments(n_paths, system.dim());
  detail::parallel_for(n_paths, threads, [&](Index begin, Index end) {
    for (Index p = begin; p < end; ++p) {
      WienerIncrements wiener(seed, static_cast<std::uint64_t>(p), system.noise_dim(), dt);
      const BoundaryOutcome out = advance(system, stepper, alpha, x, wiener.next(), dt);
      if (!out.x.allFinite()) throw DivergenceError("non-finite increment on path " + std::to_string(p), p, 1);
      increments.row(p) = (out.x - x).transpose();
    }
  });

  AlphaConsistencyReport r;
  r.x = x;
  r.dt = dt;
  r.n_paths = n_paths;
  r.alpha = alpha;
  r.stepper = stepper;
  Eigen::VectorXd mean, se;
  mean_and_standard_error(increments, mean, se);
  r.empirical_mean_increment = mean;
  r.standard_error = se;
  r.a_nid = c.a_nid;
  r.prediction_sde_premodel = c.a * dt;
  r.prediction_ito_form = (c.a + alpha * c.a_nid) * dt;
  r.prediction_paper_tot = c.a_tot * dt;
  for (Index i = 0; i < system.dim(); ++i) {
    if (se(i) > 0.0) r.nid_resolution = std::max(r.nid_resolution, std::abs(c.a_nid(i)) * dt / se(i));
  }
  r.resolvable = r.nid_resolution >= 10.0 * (1.0 - 1e-9);
  return r;
}

double resolving_conditional_dt(const SystemSpec& system, const StateVector& x, Index n_paths) {
  const auto c = evaluate(system, x, 1.0);
  const double nid = c.a_nid.cwiseAbs().maxCoeff();
  if (nid == 0.0) return std::numeric_limits<double>::infinity();
  // SE of the one-step mean ~ ||B|| sqrt(dt / N); require |a_nid| dt >= 10 SE
  const double bnorm2 = c.d.diagonal().maxCoeff();
  return 100.0 * bnorm2 / (nid * nid * static_cast<double>(n_paths));
}

MartingaleSeries martingale_deviation(const SystemSpec& system, double alpha, const StateVector& x0, double dt,
                                      double t_end, Index n_paths, std::uint64_t seed, Index record_every,
                                      Stepper stepper, unsigned threads) {
  // pure-noise precondition, probed around the start point
  for (double offset : {0.0, -0.5, 0.5, -0.1, 0.1}) {
    const StateVector p = (x0.array() + offset).matrix();
    if (!system.domain().contains(p)) continue;
    if (checked_drift(system, p).cwiseAbs().maxCoeff() != 0.0) {
      throw ConfigError("martingale: system '" + system.name() + "' has nonzero drift");
    }
  }
  EnsembleOptions opt;
  opt.alpha = alpha;
  opt.stepper = stepper;
  opt.dt = dt;
  opt.t_end = t_end;
  opt.n_paths = n_paths;
  opt.master_seed = seed;
  opt.record_every = record_every;
  opt.threads = threads;
  const PathEnsemble ens = simulate_ensemble(system, InitialCondition(x0), opt);

  MartingaleSeries out;
  out.x0 = x0;
  out.a_nid_x0 = noise_induced_drift(system, x0);
  out.alpha = alpha;
  out.n_paths = n_paths;
  for (std::size_t r = 0; r < ens.times.size(); ++r) {
    MartingalePoint pt;
    pt.t = ens.times[r];
    Eigen::VectorXd mean, se;
    mean_and_standard_error(ens.snapshots[r], mean, se);
    pt.mean_displacement = mean - Eigen::VectorXd(x0);
    pt.standard_error = se;
    pt.deviation = pt.mean_displacement.norm();
    // delta-method SE of the norm; falls back to ||se|| at zero displacement
    pt.deviation_se = pt.deviation > 0.0
                          ? std::sqrt((pt.mean_displacement.array().square() * se.array().square()).sum()) /
                                pt.deviation
                          : se.norm();
    out.points.push_back(pt);
  }
  return out;
}

}  // namespace sdelab
