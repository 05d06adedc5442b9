#include "sdelab/coords.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "sdelab/validate.hpp"

namespace sdelab {

CoordinateTransform::CoordinateTransform(TransformDefinition def) : def_(std::move(def)) {
  if (def_.dim < 1 || def_.dim > kMaxDim) throw ConfigError("transform '" + def_.name + "': bad dimension");
  if (!def_.forward || !def_.inverse) {
    throw ConfigError("transform '" + def_.name + "': forward and inverse maps are required");
  }
}

NoiseMatrix CoordinateTransform::jacobian(const StateVector& x) const {
  if (def_.jacobian) return def_.jacobian(x);
  NoiseMatrix j(def_.dim, def_.dim);
  for (Index m = 0; m < def_.dim; ++m) {
    const double h = fd_step(x(m));
    StateVector xp = x, xm = x;
    xp(m) += h;
    xm(m) -= h;
    j.col(m) = (def_.forward(xp) - def_.forward(xm)) / (2.0 * h);
  }
  return j;
}

Box CoordinateTransform::image(const Box& box) const {
  if (box.dim() != def_.dim) throw TransformError("transform '" + def_.name + "': box dimension mismatch");
  if (def_.affine) {
    // y = J x + c; works for unbounded boxes too
    const StateVector c = forward(StateVector::Zero(def_.dim));
    const NoiseMatrix j = jacobian(c);
    Box out{c, c};
    for (Index i = 0; i < def_.dim; ++i) {
      for (Index k = 0; k < def_.dim; ++k) {
        const double v = j(i, k);
        if (v == 0.0) continue;
        out.lo(i) += v > 0 ? v * box.lo(k) : v * box.hi(k);
        out.hi(i) += v > 0 ? v * box.hi(k) : v * box.lo(k);
      }
    }
    return out;
  }
  Box out{StateVector::Constant(def_.dim, std::numeric_limits<double>::infinity()),
          StateVector::Constant(def_.dim, -std::numeric_limits<double>::infinity())};
  const Index corners = Index{1} << def_.dim;
  for (Index c = 0; c < corners; ++c) {
    StateVector x(def_.dim);
    for (Index i = 0; i < def_.dim; ++i) x(i) = (c >> i) & 1 ? box.hi(i) : box.lo(i);
    const StateVector y = forward(x);
    for (Index i = 0; i < def_.dim; ++i) {
      if (std::isnan(y(i))) throw TransformError("transform '" + def_.name + "' is undefined at a domain corner");
      out.lo(i) = std::min(out.lo(i), y(i));
      out.hi(i) = std::max(out.hi(i), y(i));
    }
  }
  return out;
}

void CoordinateTransform::check(const std::vector<StateVector>& probes) const {
  for (const auto& x : probes) {
    const StateVector y = forward(x);
    if (!y.allFinite()) {
      std::ostringstream os;
      os << "transform '" << def_.name << "' is not finite at x = " << x.transpose();
      throw TransformError(os.str());
    }
    const StateVector back = inverse(y);
    if (!((back - x).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + x.cwiseAbs().maxCoeff()))) {
      std::ostringstream os;
      os << "transform '" << def_.name << "': inverse(forward(x)) != x at x = " << x.transpose();
      throw TransformError(os.str());
    }
    const double det = Eigen::MatrixXd(jacobian(x)).determinant();
    if (!(std::abs(det) > 1e-12)) {
      std::ostringstream os;
      os << "transform '" << def_.name << "': singular Jacobian at x = " << x.transpose();
      throw TransformError(os.str());
    }
  }
}

CoordinateTransform identity_transform(Index dim) {
  TransformDefinition def;
  def.name = "identity";
  def.dim = dim;
  def.forward = [](const StateVector& x) { return x; };
  def.inverse = [](const StateVector& y) { return y; };
  def.jacobian = [dim](const StateVector&) { return NoiseMatrix(NoiseMatrix::Identity(dim, dim)); };
  def.affine = true;
  return CoordinateTransform(std::move(def));
}

CoordinateTransform affine_transform(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& offset) {
  if (matrix.rows() != matrix.cols() || matrix.rows() != offset.size()) {
    throw ConfigError("affine transform: matrix must be square and match the offset length");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(matrix);
  if (!lu.isInvertible()) throw TransformError("affine transform: matrix is singular");
  const NoiseMatrix a = matrix;
  const NoiseMatrix a_inv = lu.inverse();
  const StateVector c = offset;
  TransformDefinition def;
  def.name = "affine";
  def.dim = matrix.rows();
  def.forward = [a, c](const StateVector& x) { return StateVector(a * x + c); };
  def.inverse = [a_inv, c](const StateVector& y) { return StateVector(a_inv * (y - c)); };
  def.jacobian = [a](const StateVector&) { return a; };
  def.affine = true;
  return CoordinateTransform(std::move(def));
}

namespace {

std::vector<bool> axis_mask(Index dim, const std::vector<Index>& axes) {
  std::vector<bool> mask(static_cast<std::size_t>(dim), false);
  for (Index a : axes) {
    if (a < 0 || a >= dim) throw ConfigError("transform axis out of range");
    mask[static_cast<std::size_t>(a)] = true;
  }
  return mask;
}

}  // namespace

CoordinateTransform exp_transform(Index dim, const std::vector<Index>& axes) {
  const auto mask = axis_mask(dim, axes);
  TransformDefinition def;
  def.name = "exp";
  def.dim = dim;
  def.forward = [mask](const StateVector& x) {
    StateVector y = x;
    for (Index i = 0; i < x.size(); ++i) {
      if (mask[static_cast<std::size_t>(i)]) y(i) = std::exp(x(i));
    }
    return y;
  };
  def.inverse = [mask](const StateVector& y) {
    StateVector x = y;
    for (Index i = 0; i < y.size(); ++i) {
      if (mask[static_cast<std::size_t>(i)]) x(i) = std::log(y(i));
    }
    return x;
  };
  def.jacobian = [mask](const StateVector& x) {
    NoiseMatrix j = NoiseMatrix::Identity(x.size(), x.size());
    for (Index i = 0; i < x.size(); ++i) {
      if (mask[static_cast<std::size_t>(i)]) j(i, i) = std::exp(x(i));
    }
    return j;
  };
  return CoordinateTransform(std::move(def));
}

CoordinateTransform log_transform(Index dim, const std::vector<Index>& axes) {
  const auto e = exp_transform(dim, axes);
  TransformDefinition def;
  def.name = "log";
  def.dim = dim;
  def.forward = e.definition().inverse;
  def.inverse = e.definition().forward;
  def.jacobian = [e](const StateVector& x) {
    const StateVector y = e.inverse(x);
    return NoiseMatrix(Eigen::MatrixXd(e.jacobian(y)).inverse());
  };
  return CoordinateTransform(std::move(def));
}

CoordinateTransform compose(const CoordinateTransform& inner, const CoordinateTransform& outer) {
  if (inner.dim() != outer.dim()) throw ConfigError("compose: dimension mismatch");
  TransformDefinition def;
  def.name = outer.name() + "*" + inner.name();
  def.dim = inner.dim();
  def.forward = [inner, outer](const StateVector& x) { return outer.forward(inner.forward(x)); };
  def.inverse = [inner, outer](const StateVector& z) { return inner.inverse(outer.inverse(z)); };
  def.jacobian = [inner, outer](const StateVector& x) {
    return NoiseMatrix(outer.jacobian(inner.forward(x)) * inner.jacobian(x));
  };
  def.affine = inner.affine() && outer.affine();
  return CoordinateTransform(std::move(def));
}

void TransformRegistry::add(const CoordinateTransform& t) {
  if (entries_.contains(t.name())) throw ConfigError("transform '" + t.name() + "' is already registered");
  entries_.emplace(t.name(), t);
}

const CoordinateTransform& TransformRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown transform '" + name + "'");
  return it->second;
}

std::vector<StateVector> domain_probes(const Box& box, Index per_axis) {
  const Index dim = box.dim();
  std::vector<StateVector> out;
  Index total = 1;
  for (Index d = 0; d < dim; ++d) total *= per_axis;
  for (Index k = 0; k < total; ++k) {
    StateVector x(dim);
    Index rem = k;
    for (Index d = 0; d < dim; ++d) {
      const double s = (static_cast<double>(rem % per_axis) + 0.5) / static_cast<double>(per_axis);
      rem /= per_axis;
      const double lo = std::isfinite(box.lo(d)) ? box.lo(d) : -2.0;
      const double hi = std::isfinite(box.hi(d)) ? box.hi(d) : 2.0;
      x(d) = lo + s * (hi - lo);
    }
    out.push_back(x);
  }
  // closed domain: the corners too
  for (Index c = 0; c < (Index{1} << dim); ++c) {
    StateVector x(dim);
    for (Index d = 0; d < dim; ++d) {
      const double v = (c >> d) & 1 ? box.hi(d) : box.lo(d);
      x(d) = std::isfinite(v) ? v : ((c >> d) & 1 ? 2.0 : -2.0);
    }
    out.push_back(x);
  }
  return out;
}

SystemSpec transform_system(const SystemSpec& system, const CoordinateTransform& t) {
  if (t.dim() != system.dim()) throw TransformError("transform_system: dimension mismatch");
  t.check(domain_probes(system.domain()));

  const SystemDefinition& src = system.definition();
  SystemDefinition def;
  def.name = system.name() + "@" + t.name();
  def.description = system.description() + ", in " + t.name() + " coordinates";
  def.dim = system.dim();
  def.noise_dim = system.noise_dim();
  def.drift = [drift = src.drift, t](const StateVector& y) {
    const StateVector x = t.inverse(y);
    return StateVector(t.jacobian(x) * drift(x));
  };
  def.noise = [noise = src.noise, t](const StateVector& y) {
    const StateVector x = t.inverse(y);
    return NoiseMatrix(t.jacobian(x) * noise(x));
  };
  if (t.affine()) {
    // constant J: dB'/dy^m = J sum_l dB/dx^l (J^{-1})^l_m
    const NoiseMatrix j = t.jacobian(StateVector::Zero(system.dim()));
    const NoiseMatrix j_inv = Eigen::MatrixXd(j).inverse();
    if (src.noise_derivative) {
      def.noise_derivative = [nd = src.noise_derivative, t, j, j_inv](const StateVector& y, Index m) {
        const StateVector x = t.inverse(y);
        NoiseMatrix acc = NoiseMatrix::Zero(j.rows(), nd(x, 0).cols());
        for (Index l = 0; l < j.rows(); ++l) {
          if (j_inv(l, m) != 0.0) acc += nd(x, l) * j_inv(l, m);
        }
        return NoiseMatrix(j * acc);
      };
    }
    if (src.drift_jacobian) {
      def.drift_jacobian = [dj = src.drift_jacobian, t, j, j_inv](const StateVector& y) {
        return NoiseMatrix(j * dj(t.inverse(y)) * j_inv);
      };
    }
  }
  def.domain = t.image(system.domain());
  def.boundary = system.boundary();
  return SystemSpec(std::move(def));
}

StateVector contravariance_violation(const SystemSpec& system, const CoordinateTransform& t, double alpha,
                                     const StateVector& x) {
  const SystemSpec image = transform_system(system, t);
  const auto cx = evaluate(system, x, alpha);
  const auto cy = evaluate(image, t.forward(x), alpha);
  return (cy.a + alpha * cy.a_nid) - t.jacobian(x) * (cx.a + alpha * cx.a_nid);
}

GridGeometry image_geometry(const GridGeometry& source, const CoordinateTransform& t) {
  Box box{StateVector(source.dim()), StateVector(source.dim())};
  for (Index d = 0; d < source.dim(); ++d) {
    box.lo(d) = source.axis(d).lo;
    box.hi(d) = source.axis(d).hi;
  }
  const Box img = t.image(box);
  std::vector<Axis> axes;
  for (Index d = 0; d < source.dim(); ++d) axes.push_back(Axis{img.lo(d), img.hi(d), source.axis(d).cells});
  return GridGeometry(std::move(axes));
}

namespace {

// Multilinear interpolation through cell centres; linear extrapolation in the
// half cells next to the walls, zero outside the grid box.
double interpolate(const DensityGrid& grid, const StateVector& x) {
  const GridGeometry& g = grid.geometry;
  const Index dim = g.dim();
  std::vector<Index> base(static_cast<std::size_t>(dim));
  std::vector<double> frac(static_cast<std::size_t>(dim));
  for (Index d = 0; d < dim; ++d) {
    const Axis& ax = g.axis(d);
    if (!(x(d) >= ax.lo - 1e-12 * (ax.hi - ax.lo) && x(d) <= ax.hi + 1e-12 * (ax.hi - ax.lo))) return 0.0;
    const double s = (x(d) - ax.lo) / ax.width() - 0.5;
    const Index i = std::clamp<Index>(static_cast<Index>(std::floor(s)), 0, ax.cells - 2);
    base[static_cast<std::size_t>(d)] = i;
    frac[static_cast<std::size_t>(d)] = s - static_cast<double>(i);
  }
  double acc = 0.0;
  for (Index corner = 0; corner < (Index{1} << dim); ++corner) {
    double weight = 1.0;
    std::vector<Index> idx = base;
    for (Index d = 0; d < dim; ++d) {
      const double f = frac[static_cast<std::size_t>(d)];
      if ((corner >> d) & 1) {
        idx[static_cast<std::size_t>(d)] += 1;
        weight *= f;
      } else {
        weight *= 1.0 - f;
      }
    }
    if (weight != 0.0) acc += weight * grid.w(g.flat(idx));
  }
  return std::max(acc, 0.0);
}

}  // namespace

DensityGrid transform_density(const DensityGrid& grid, const CoordinateTransform& t) {
  return transform_density(grid, t, image_geometry(grid.geometry, t));
}

DensityGrid transform_density(const DensityGrid& grid, const CoordinateTransform& t, const GridGeometry& target) {
  if (target.dim() != t.dim() || grid.geometry.dim() != t.dim()) {
    throw ConfigError("transform_density: dimension mismatch");
  }
  DensityGrid out{target, Eigen::VectorXd(target.size()), grid.time, {}};
  for (Index c = 0; c < target.size(); ++c) {
    const StateVector x = t.inverse(target.center(c));
    const double det = std::abs(Eigen::MatrixXd(t.jacobian(x)).determinant());
    if (!(det > 1e-12)) throw TransformError("transform_density: singular Jacobian");
    out.w(c) = interpolate(grid, x) / det;
  }
  const double in_mass = grid.total_mass();
  const double mass = out.total_mass();
  if (std::abs(mass - in_mass) > 1e-3 * std::max(in_mass, 1e-300)) {
    std::ostringstream os;
    os << "transform_density: image grid misses mass (" << mass << " vs " << in_mass << "); refine the grid";
    throw ResolutionError(os.str());
  }
  if (mass > 0.0) out.w *= in_mass / mass;
  return out;
}

InvarianceReport invariance_check(const SystemSpec& system, const CoordinateTransform& t, double alpha,
                                  const InvarianceParams& params) {
  if (!params.initial) throw ConfigError("invariance_check: an initial density is required");
  const GridGeometry gx = params.grid.geometry(system.domain());
  DensityGrid w0{gx, Eigen::VectorXd(gx.size()), 0.0, {}};
  for (Index c = 0; c < gx.size(); ++c) w0.w(c) = params.initial(gx.center(c));
  w0.normalize();

  const SystemSpec image = transform_system(system, t);
  const GridGeometry gy = image_geometry(gx, t);

  const FokkerPlanckOperator op_x(system, alpha, gx);
  const DensityGrid x_end = evolve_for(op_x, w0, params.t_end, params.safety);

  const FokkerPlanckOperator op_y(image, alpha, gy);
  const DensityGrid y_end = evolve_for(op_y, transform_density(w0, t, gy), params.t_end, params.safety);

  InvarianceReport r;
  r.alpha = alpha;
  r.mapped_x_solution = transform_density(x_end, t, gy);
  r.y_solution = y_end;
  r.l1_mismatch = l1_distance(r.mapped_x_solution, r.y_solution);
  return r;
}

InvarianceRefinement invariance_refinement(const SystemSpec& system, const CoordinateTransform& t, double alpha,
                                           const InvarianceParams& params) {
  InvarianceRefinement out;
  out.baseline = invariance_check(system, t, alpha, params);
  InvarianceParams fine = params;
  for (auto& n : fine.grid.cells) n *= 2;
  out.refined = invariance_check(system, t, alpha, fine);
  out.ratio = out.baseline.l1_mismatch / out.refined.l1_mismatch;
  return out;
}

}  // namespace sdelab
