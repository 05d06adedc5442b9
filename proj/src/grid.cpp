#include "sdelab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdelab {

Index Axis::locate(double v) const {
  const auto i = static_cast<Index>(std::floor((v - lo) / width()));
  return std::clamp<Index>(i, 0, cells - 1);
}

GridGeometry::GridGeometry(std::vector<Axis> axes) : axes_(std::move(axes)) {
  if (axes_.empty() || axes_.size() > 2) throw ConfigError("grids are 1D or 2D");
  size_ = 1;
  for (const Axis& a : axes_) {
    if (a.cells < 2) throw ConfigError("grid axes need at least 2 cells");
    if (!(std::isfinite(a.lo) && std::isfinite(a.hi) && a.lo < a.hi)) {
      throw ConfigError("grid axes need finite increasing bounds");
    }
    strides_.push_back(size_);
    size_ *= a.cells;
  }
}

double GridGeometry::cell_volume() const {
  double v = 1.0;
  for (const Axis& a : axes_) v *= a.width();
  return v;
}

Index GridGeometry::flat(const std::vector<Index>& idx) const {
  Index f = 0;
  for (std::size_t d = 0; d < axes_.size(); ++d) f += idx[d] * strides_[d];
  return f;
}

std::vector<Index> GridGeometry::unflat(Index flat) const {
  std::vector<Index> idx(axes_.size());
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    idx[d] = flat % axes_[d].cells;
    flat /= axes_[d].cells;
  }
  return idx;
}

StateVector GridGeometry::center(Index flat) const {
  StateVector x(dim());
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    x(static_cast<Index>(d)) = axes_[d].center(flat % axes_[d].cells);
    flat /= axes_[d].cells;
  }
  return x;
}

Index GridGeometry::locate(const StateVector& x) const {
  Index f = 0;
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    const double v = x(static_cast<Index>(d));
    if (!(v >= axes_[d].lo && v <= axes_[d].hi)) return -1;
    f += axes_[d].locate(v) * strides_[d];
  }
  return f;
}

bool GridGeometry::same_as(const GridGeometry& other, double tol) const {
  if (axes_.size() != other.axes_.size()) return false;
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    if (axes_[d].cells != other.axes_[d].cells) return false;
    if (std::abs(axes_[d].lo - other.axes_[d].lo) > tol || std::abs(axes_[d].hi - other.axes_[d].hi) > tol) {
      return false;
    }
  }
  return true;
}

GridGeometry GridSpec::geometry(const Box& domain) const {
  if (static_cast<Index>(cells.size()) != domain.dim()) {
    throw ConfigError("grid needs one cell count per dimension");
  }
  if ((!lo.empty() && lo.size() != cells.size()) || (!hi.empty() && hi.size() != cells.size())) {
    throw ConfigError("grid bounds need one value per dimension");
  }
  std::vector<Axis> axes;
  for (std::size_t d = 0; d < cells.size(); ++d) {
    Axis a;
    a.lo = lo.empty() ? domain.lo(static_cast<Index>(d)) : lo[d];
    a.hi = hi.empty() ? domain.hi(static_cast<Index>(d)) : hi[d];
    a.cells = cells[d];
    if (!std::isfinite(a.lo) || !std::isfinite(a.hi)) {
      throw ConfigError("grid axis " + std::to_string(d) + " needs finite bounds (unbounded domain)");
    }
    axes.push_back(a);
  }
  return GridGeometry(std::move(axes));
}

double DensityGrid::total_mass() const { return w.sum() * geometry.cell_volume(); }

void DensityGrid::normalize() {
  const double m = total_mass();
  if (!(m > 0.0) || !std::isfinite(m)) throw SolverError("cannot normalize a density with mass " + std::to_string(m));
  w /= m;
}

DensityGrid uniform_density(const GridGeometry& g) {
  DensityGrid out{g, Eigen::VectorXd::Ones(g.size()), 0.0, {}};
  out.normalize();
  return out;
}

DensityGrid point_density(const GridGeometry& g, const StateVector& x0) {
  const Index cell = g.locate(x0);
  if (cell < 0) throw DomainError("initial point lies outside the grid");
  // cloud-in-cell: linear weights on the neighbouring centres keep the mean
  const Index dim = g.dim();
  std::vector<Index> base(static_cast<std::size_t>(dim));
  std::vector<double> frac(static_cast<std::size_t>(dim));
  for (Index d = 0; d < dim; ++d) {
    const Axis& ax = g.axis(d);
    const double s = (x0(d) - ax.lo) / ax.width() - 0.5;
    Index i0 = static_cast<Index>(std::floor(s));
    double f = s - static_cast<double>(i0);
    if (i0 < 0) {
      i0 = 0;
      f = 0.0;
    } else if (i0 >= ax.cells - 1) {
      i0 = ax.cells - 1;
      f = 0.0;
    }
    base[static_cast<std::size_t>(d)] = i0;
    frac[static_cast<std::size_t>(d)] = f;
  }
  DensityGrid out{g, Eigen::VectorXd::Zero(g.size()), 0.0, {}};
  for (Index corner = 0; corner < (Index{1} << dim); ++corner) {
    std::vector<Index> idx = base;
    double weight = 1.0;
    for (Index d = 0; d < dim; ++d) {
      const auto k = static_cast<std::size_t>(d);
      const bool up = (corner >> d) & 1;
      weight *= up ? frac[k] : 1.0 - frac[k];
      if (up) ++idx[k];
    }
    if (weight > 0.0) out.w(g.flat(idx)) += weight / g.cell_volume();
  }
  return out;
}

DensityGrid gaussian_density(const GridGeometry& g, const StateVector& mean, double std_dev) {
  if (!(std_dev > 0.0)) throw ConfigError("gaussian initial density needs a positive std");
  DensityGrid out{g, Eigen::VectorXd(g.size()), 0.0, {}};
  for (Index c = 0; c < g.size(); ++c) {
    const double r2 = (g.center(c) - mean).squaredNorm();
    out.w(c) = std::exp(-0.5 * r2 / (std_dev * std_dev));
  }
  out.normalize();
  return out;
}

}  // namespace sdelab
