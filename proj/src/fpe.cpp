#include "sdelab/fpe.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/SparseLU>
#include <Eigen/SparseQR>

namespace sdelab {

double bernoulli(double z) {
  const double az = std::abs(z);
  if (az < 1e-4) return 1.0 - 0.5 * z + z * z / 12.0;
  if (z > 700.0) return z * std::exp(-z);
  return z / std::expm1(z);
}

namespace {

// Face numbering along `axis`: same as cells but with cells_d + 1 entries on
// that axis.
Index face_count_of(const GridGeometry& g, Index axis) {
  Index n = 1;
  for (Index e = 0; e < g.dim(); ++e) n *= g.axis(e).cells + (e == axis ? 1 : 0);
  return n;
}

Index face_index_of(const GridGeometry& g, Index axis, const std::vector<Index>& idx) {
  Index f = 0, stride = 1;
  for (Index e = 0; e < g.dim(); ++e) {
    f += idx[static_cast<std::size_t>(e)] * stride;
    stride *= g.axis(e).cells + (e == axis ? 1 : 0);
  }
  return f;
}

std::vector<Index> face_unflat(const GridGeometry& g, Index axis, Index f) {
  std::vector<Index> idx(static_cast<std::size_t>(g.dim()));
  for (Index e = 0; e < g.dim(); ++e) {
    const Index n = g.axis(e).cells + (e == axis ? 1 : 0);
    idx[static_cast<std::size_t>(e)] = f % n;
    f /= n;
  }
  return idx;
}

// Cell-centred gradient of w along `axis` at cell `idx`, as weighted cell
// references. Periodic axes wrap; other walls fall back to one-sided
// differences.
std::vector<std::pair<Index, double>> cell_gradient_terms(const GridGeometry& g, Boundary bt, Index axis,
                                                          std::vector<Index> idx) {
  const Index n = g.axis(axis).cells;
  const double h = g.axis(axis).width();
  const auto a = static_cast<std::size_t>(axis);
  const Index i = idx[a];
  auto at = [&](Index j) {
    idx[a] = j;
    return g.flat(idx);
  };
  if (i > 0 && i < n - 1) return {{at(i + 1), 0.5 / h}, {at(i - 1), -0.5 / h}};
  if (bt == Boundary::periodic) {
    return {{at((i + 1) % n), 0.5 / h}, {at((i + n - 1) % n), -0.5 / h}};
  }
  if (i == 0) return {{at(1), 1.0 / h}, {at(0), -1.0 / h}};
  return {{at(n - 1), 1.0 / h}, {at(n - 2), -1.0 / h}};
}

void check_grid_matches(const SystemSpec& system, const GridGeometry& g) {
  if (g.dim() != system.dim()) throw ConfigError("grid dimension does not match the system");
  for (Index d = 0; d < g.dim(); ++d) {
    const Axis& ax = g.axis(d);
    const Box& box = system.domain();
    if (ax.lo < box.lo(d) - 1e-12 || ax.hi > box.hi(d) + 1e-12) {
      throw DomainError("grid axis " + std::to_string(d) + " extends beyond the domain of '" + system.name() + "'");
    }
  }
}

}  // namespace

FokkerPlanckOperator::FokkerPlanckOperator(const SystemSpec& system, double alpha, GridGeometry geometry)
    : geometry_(std::move(geometry)), alpha_(alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  check_grid_matches(system, geometry_);
  boundaries_ = system.boundary();
  build(system);
}

bool FokkerPlanckOperator::closed() const {
  for (Boundary b : boundaries_) {
    if (b != Boundary::reflecting && b != Boundary::periodic) return false;
  }
  return true;
}

Index FokkerPlanckOperator::face_count(Index axis) const { return face_count_of(geometry_, axis); }

Index FokkerPlanckOperator::face_index(Index axis, const std::vector<Index>& idx) const {
  return face_index_of(geometry_, axis, idx);
}

void FokkerPlanckOperator::build(const SystemSpec& system) {
  const GridGeometry& g = geometry_;
  const Index dim = g.dim();
  faces_.assign(static_cast<std::size_t>(dim), {});
  cfl_diffusion_ = std::numeric_limits<double>::infinity();
  cfl_drift_ = std::numeric_limits<double>::infinity();

  for (Index d = 0; d < dim; ++d) {
    const Axis& ax = g.axis(d);
    const Index n = ax.cells;
    const double h = ax.width();
    const Boundary bt = system.boundary(d);
    auto& faces = faces_[static_cast<std::size_t>(d)];
    faces.resize(static_cast<std::size_t>(face_count(d)));

    for (Index f = 0; f < face_count(d); ++f) {
      const auto fidx = face_unflat(g, d, f);
      const Index pos = fidx[static_cast<std::size_t>(d)];
      const bool wall = pos == 0 || pos == n;
      if (wall && bt == Boundary::reflecting) continue;  // zero normal flux

      // adjacent cells; -1 marks a ghost cell holding w = 0
      Index left = -1, right = -1;
      auto cell_at = [&](Index i) {
        auto idx = fidx;
        idx[static_cast<std::size_t>(d)] = i;
        return g.flat(idx);
      };
      if (!wall) {
        left = cell_at(pos - 1);
        right = cell_at(pos);
      } else if (bt == Boundary::periodic) {
        left = cell_at(n - 1);
        right = cell_at(0);
      } else if (pos == 0) {
        right = cell_at(0);
      } else {
        left = cell_at(n - 1);
      }

      StateVector xf(dim);
      for (Index e = 0; e < dim; ++e) {
        xf(e) = e == d ? (wall && bt == Boundary::periodic ? ax.lo : ax.face(pos))
                       : g.axis(e).center(fidx[static_cast<std::size_t>(e)]);
      }
      const StateVector a = checked_drift(system, xf);
      const NoiseMatrix b = checked_noise(system, xf);
      const NoiseMatrix dmat = diffusion_matrix(b);
      StateVector a_nid = StateVector::Zero(dim);
      for (Index m = 0; m < dim; ++m) a_nid.noalias() += noise_derivative(system, xf, m) * b.row(m).transpose();
      const StateVector half_div = half_diffusion_divergence(system, xf);

      const double v = a(d) + alpha_ * a_nid(d) - half_div(d);
      const double dd = 0.5 * dmat(d, d);
      double c_left, c_right;
      if (dd > 0.0) {
        const double pe = v * h / dd;
        c_left = dd / h * bernoulli(-pe);
        c_right = -dd / h * bernoulli(pe);
        cfl_diffusion_ = std::min(cfl_diffusion_, h * h / dmat(d, d));
      } else {
        c_left = std::max(v, 0.0);
        c_right = std::min(v, 0.0);
      }
      if (v != 0.0) cfl_drift_ = std::min(cfl_drift_, h / std::abs(v));

      FaceStencil& st = faces[static_cast<std::size_t>(f)];
      if (left >= 0) st.terms.push_back({left, c_left});
      if (right >= 0) st.terms.push_back({right, c_right});

      // -(1/2) D^{de} d_e w, with d_e w averaged over the real adjacent cells
      for (Index e = 0; e < dim; ++e) {
        if (e == d || dmat(d, e) == 0.0) continue;
        const double c = -0.5 * dmat(d, e);
        const int real = (left >= 0) + (right >= 0);
        for (Index cell : {left, right}) {
          if (cell < 0) continue;
          for (const auto& [ref, wgt] : cell_gradient_terms(g, system.boundary(e), e, g.unflat(cell))) {
            st.terms.push_back({ref, c * wgt / real});
          }
        }
      }
    }
  }

  // L w = -sum_d (F_right - F_left) / h_d
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index c = 0; c < g.size(); ++c) {
    const auto idx = g.unflat(c);
    for (Index d = 0; d < dim; ++d) {
      const double h = g.axis(d).width();
      auto fidx = idx;
      const Index f_left = face_index(d, fidx);
      fidx[static_cast<std::size_t>(d)] += 1;
      const Index f_right = face_index(d, fidx);
      for (const Term& t : faces_[static_cast<std::size_t>(d)][static_cast<std::size_t>(f_right)].terms) {
        triplets.emplace_back(c, t.cell, -t.coef / h);
      }
      for (const Term& t : faces_[static_cast<std::size_t>(d)][static_cast<std::size_t>(f_left)].terms) {
        triplets.emplace_back(c, t.cell, t.coef / h);
      }
    }
  }
  matrix_.resize(g.size(), g.size());
  matrix_.setFromTriplets(triplets.begin(), triplets.end());
  matrix_.makeCompressed();
  max_outflow_ = 0.0;
  for (Index c = 0; c < g.size(); ++c) max_outflow_ = std::max(max_outflow_, -matrix_.coeff(c, c));
}

CurrentField FokkerPlanckOperator::current(const Eigen::VectorXd& w) const {
  if (w.size() != geometry_.size()) throw ConfigError("density does not match the operator grid");
  CurrentField j;
  j.geometry = geometry_;
  j.alpha = alpha_;
  j.boundaries = boundaries_;
  const Index dim = geometry_.dim();
  for (Index d = 0; d < dim; ++d) {
    const auto& faces = faces_[static_cast<std::size_t>(d)];
    Eigen::VectorXd flux(static_cast<Index>(faces.size()));
    for (std::size_t f = 0; f < faces.size(); ++f) {
      double acc = 0.0;
      for (const Term& t : faces[f].terms) acc += t.coef * w(t.cell);
      flux(static_cast<Index>(f)) = acc;
    }
    j.face_flux.push_back(std::move(flux));
  }
  j.cell.resize(geometry_.size(), dim);
  for (Index c = 0; c < geometry_.size(); ++c) {
    auto idx = geometry_.unflat(c);
    for (Index d = 0; d < dim; ++d) {
      auto fidx = idx;
      const double left = j.face_flux[static_cast<std::size_t>(d)](face_index(d, fidx));
      fidx[static_cast<std::size_t>(d)] += 1;
      const double right = j.face_flux[static_cast<std::size_t>(d)](face_index(d, fidx));
      j.cell(c, d) = 0.5 * (left + right);
    }
  }
  return j;
}

Eigen::VectorXd divergence(const CurrentField& j) {
  const GridGeometry& g = j.geometry;
  Eigen::VectorXd div = Eigen::VectorXd::Zero(g.size());
  for (Index c = 0; c < g.size(); ++c) {
    const auto idx = g.unflat(c);
    for (Index d = 0; d < g.dim(); ++d) {
      auto fidx = idx;
      const double left = j.face_flux[static_cast<std::size_t>(d)](face_index_of(g, d, fidx));
      fidx[static_cast<std::size_t>(d)] += 1;
      const double right = j.face_flux[static_cast<std::size_t>(d)](face_index_of(g, d, fidx));
      div(c) += (right - left) / g.axis(d).width();
    }
  }
  return div;
}

Eigen::VectorXd FokkerPlanckOperator::apply(const Eigen::VectorXd& w) const { return -divergence(current(w)); }

double FokkerPlanckOperator::max_stable_dt(double safety) const {
  double dt = safety * std::min(cfl_diffusion_, cfl_drift_);
  if (max_outflow_ > 0.0) dt = std::min(dt, 1.0 / max_outflow_);
  if (!std::isfinite(dt)) throw ConfigError("operator is identically zero; no stability bound exists");
  return dt;
}

Eigen::VectorXd apply_operator(const SystemSpec& system, double alpha, const DensityGrid& grid) {
  return FokkerPlanckOperator(system, alpha, grid.geometry).apply(grid.w);
}

CurrentField current(const SystemSpec& system, double alpha, const DensityGrid& grid) {
  return FokkerPlanckOperator(system, alpha, grid.geometry).current(grid.w);
}

Eigen::VectorXd gradient_current_product(const DensityGrid& grid, const CurrentField& j) {
  const GridGeometry& g = grid.geometry;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(g.size());
  for (Index c = 0; c < g.size(); ++c) {
    const auto idx = g.unflat(c);
    for (Index d = 0; d < g.dim(); ++d) {
      const Index n = g.axis(d).cells;
      const double h = g.axis(d).width();
      const Index i = idx[static_cast<std::size_t>(d)];
      const Boundary bt = j.boundaries[static_cast<std::size_t>(d)];
      // neighbour value across a face; walls use the stencil's ghost value
      auto value = [&](Index k) {
        if ((k < 0 || k >= n) && bt != Boundary::periodic) return 0.0;
        auto nidx = idx;
        nidx[static_cast<std::size_t>(d)] = (k + n) % n;
        return grid.w(g.flat(nidx));
      };
      auto fidx = idx;
      const double f_left = j.face_flux[static_cast<std::size_t>(d)](face_index_of(g, d, fidx));
      fidx[static_cast<std::size_t>(d)] += 1;
      const double f_right = j.face_flux[static_cast<std::size_t>(d)](face_index_of(g, d, fidx));
      const double g_left = (value(i) - value(i - 1)) / h;
      const double g_right = (value(i + 1) - value(i)) / h;
      out(c) += 0.5 * (g_left * f_left + g_right * f_right);
    }
  }
  return out;
}

DensityGrid evolve(const SystemSpec& system, double alpha, const DensityGrid& grid, double dt, Index n_steps) {
  return evolve(FokkerPlanckOperator(system, alpha, grid.geometry), grid, dt, n_steps);
}

DensityGrid evolve(const FokkerPlanckOperator& op, const DensityGrid& grid, double dt, Index n_steps) {
  if (!grid.geometry.same_as(op.geometry())) throw ConfigError("density grid does not match the operator grid");
  if (!(dt > 0.0) || n_steps < 0) throw ConfigError("evolve: dt must be positive and n_steps nonnegative");
  const double dt_max = op.max_stable_dt(0.4);
  if (dt > dt_max * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "evolve: dt = " << dt << " violates the stability bound; use dt <= " << dt_max;
    throw StepSizeError(os.str(), dt_max);
  }
  DensityGrid out = grid;
  if (out.ledger.steps == 0) out.ledger.initial_mass = grid.total_mass();
  Eigen::SparseMatrix<double> step(op.matrix().rows(), op.matrix().cols());
  step.setIdentity();
  step += dt * op.matrix();
  const double vol = grid.geometry.cell_volume();

  Eigen::VectorXd next(out.w.size());
  double mass = out.w.sum() * vol;
  for (Index s = 0; s < n_steps; ++s) {
    next.noalias() = step * out.w;
    out.w.swap(next);
    const double new_mass = out.w.sum() * vol;
    out.ledger.max_step_change = std::max(out.ledger.max_step_change, std::abs(new_mass - mass));
    mass = new_mass;
    const double lo = out.w.minCoeff();
    if (lo < -1e-13 * out.w.cwiseAbs().maxCoeff()) {
      throw SolverError("evolve: density lost nonnegativity at step " + std::to_string(s + 1) +
                        " (cross-diffusion too strong for this grid)");
    }
    out.ledger.min_value = std::min(out.ledger.min_value, lo);
  }
  out.ledger.steps += n_steps;
  out.time = grid.time + dt * static_cast<double>(n_steps);
  return out;
}

DensityGrid evolve_for(const FokkerPlanckOperator& op, const DensityGrid& grid, double duration, double safety) {
  if (!(duration > 0.0)) throw ConfigError("evolve: duration must be positive");
  const double dt_max = op.max_stable_dt(safety);
  const auto n = static_cast<Index>(std::ceil(duration / dt_max * (1.0 - 1e-12)));
  DensityGrid out = evolve(op, grid, duration / static_cast<double>(n), n);
  out.time = grid.time + duration;
  return out;
}

double operator_residual(const FokkerPlanckOperator& op, const Eigen::VectorXd& w) {
  return (op.matrix() * w).cwiseAbs().maxCoeff();
}

DensityGrid stationary(const SystemSpec& system, double alpha, const GridSpec& spec) {
  if (!system.closed()) throw ConfigError("stationary: boundaries must be reflecting or periodic");
  return stationary(FokkerPlanckOperator(system, alpha, spec.geometry(system.domain())));
}

DensityGrid stationary(const FokkerPlanckOperator& op) {
  if (!op.closed()) throw ConfigError("stationary: boundaries must be reflecting or periodic");
  const auto& l = op.matrix();
  const Index n = l.rows();
  const double vol = op.geometry().cell_volume();
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index col = 0; col < l.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(l, col); it; ++it) {
      if (it.row() != 0) triplets.emplace_back(it.row(), it.col(), it.value());
    }
  }
  for (Index c = 0; c < n; ++c) triplets.emplace_back(0, c, vol);
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  a.makeCompressed();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(0) = 1.0;

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  Eigen::VectorXd w;
  if (lu.info() == Eigen::Success) w = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !w.allFinite()) {
    Eigen::SparseQR<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> qr(a);
    std::ostringstream os;
    os << "stationary: singular generator (rank " << qr.rank() << " of " << n
       << " with the normalization row); the grid chain is not irreducible";
    throw SolverError(os.str());
  }
  if (w.minCoeff() < -1e-12 * w.cwiseAbs().maxCoeff()) {
    throw SolverError("stationary: solution has negative entries (min " + std::to_string(w.minCoeff()) + ")");
  }
  DensityGrid out{op.geometry(), w, 0.0, {}};
  out.ledger.initial_mass = out.total_mass();
  return out;
}

Eigen::VectorXd apply_operator_expanded(const SystemSpec& system, double alpha, const DensityGrid& grid) {
  const GridGeometry& g = grid.geometry;
  check_grid_matches(system, g);
  const Index dim = g.dim();
  const Index n = g.size();
  Eigen::MatrixXd drift(n, dim);               // a + alpha a_nid
  std::vector<NoiseMatrix> dmat(static_cast<std::size_t>(n));
  for (Index c = 0; c < n; ++c) {
    const auto coef = evaluate(system, g.center(c), alpha);
    drift.row(c) = (coef.a + alpha * coef.a_nid).transpose();
    dmat[static_cast<std::size_t>(c)] = coef.d;
  }
  auto shifted = [&](Index c, Index axis, Index by) {
    auto idx = g.unflat(c);
    idx[static_cast<std::size_t>(axis)] += by;
    return g.flat(idx);
  };
  auto inside = [&](Index c, Index margin) {
    const auto idx = g.unflat(c);
    for (Index d = 0; d < dim; ++d) {
      const Index i = idx[static_cast<std::size_t>(d)];
      if (i < margin || i > g.axis(d).cells - 1 - margin) return false;
    }
    return true;
  };
  // q_i = -(a^i + alpha a_nid^i) w + (1/2) sum_k d_k (D^{ik} w)
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(n, dim, std::numeric_limits<double>::quiet_NaN());
  for (Index c = 0; c < n; ++c) {
    if (!inside(c, 1)) continue;
    for (Index i = 0; i < dim; ++i) {
      double acc = -drift(c, i) * grid.w(c);
      for (Index k = 0; k < dim; ++k) {
        const Index up = shifted(c, k, 1), dn = shifted(c, k, -1);
        acc += 0.5 * (dmat[static_cast<std::size_t>(up)](i, k) * grid.w(up) -
                      dmat[static_cast<std::size_t>(dn)](i, k) * grid.w(dn)) /
               (2.0 * g.axis(k).width());
      }
      q(c, i) = acc;
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (Index c = 0; c < n; ++c) {
    if (!inside(c, 2)) continue;
    double acc = 0.0;
    for (Index i = 0; i < dim; ++i) {
      acc += (q(shifted(c, i, 1), i) - q(shifted(c, i, -1), i)) / (2.0 * g.axis(i).width());
    }
    out(c) = acc;
  }
  return out;
}

}  // namespace sdelab
