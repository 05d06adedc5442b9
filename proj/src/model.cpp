#include "sdelab/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace sdelab {

std::string to_string(Boundary b) {
  switch (b) {
    case Boundary::reflecting: return "reflecting";
    case Boundary::absorbing: return "absorbing";
    case Boundary::periodic: return "periodic";
    case Boundary::open: return "open";
  }
  return "unknown";
}

Boundary boundary_from_string(const std::string& name) {
  if (name == "reflecting") return Boundary::reflecting;
  if (name == "absorbing") return Boundary::absorbing;
  if (name == "periodic") return Boundary::periodic;
  if (name == "open") return Boundary::open;
  throw ConfigError("unknown boundary type '" + name + "'");
}

bool Box::contains(const StateVector& x) const {
  if (x.size() != lo.size()) return false;
  for (Index i = 0; i < x.size(); ++i) {
    if (!(x(i) >= lo(i) && x(i) <= hi(i))) return false;
  }
  return true;
}

bool Box::finite() const { return lo.allFinite() && hi.allFinite(); }

double Box::scale() const {
  double s = 0.0;
  for (Index i = 0; i < lo.size(); ++i) {
    const double w = hi(i) - lo(i);
    if (std::isfinite(w)) s = std::max(s, w);
  }
  return s > 0.0 ? s : 1.0;
}

namespace {

std::string format_point(const StateVector& x) {
  std::ostringstream os;
  os << "(";
  for (Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << ")";
  return os.str();
}

void require_in_domain(const SystemSpec& system, const StateVector& x, const char* op) {
  if (x.size() != system.dim()) {
    throw DomainError(std::string(op) + ": point has dimension " + std::to_string(x.size()) +
                      ", system '" + system.name() + "' has " + std::to_string(system.dim()));
  }
  if (!system.domain().contains(x)) {
    throw DomainError(std::string(op) + ": point " + format_point(x) + " outside the domain of '" +
                      system.name() + "'");
  }
}

}  // namespace

SystemSpec::SystemSpec(SystemDefinition def) : def_(std::move(def)) {
  if (def_.dim < 1 || def_.dim > kMaxDim) {
    throw ConfigError("system '" + def_.name + "': dim must be in [1, " + std::to_string(kMaxDim) + "]");
  }
  if (def_.noise_dim < 1 || def_.noise_dim > kMaxDim) {
    throw ConfigError("system '" + def_.name + "': noise_dim must be in [1, " + std::to_string(kMaxDim) + "]");
  }
  if (!def_.drift || !def_.noise) {
    throw ConfigError("system '" + def_.name + "': drift and noise fields are required");
  }
  if (def_.domain.lo.size() != def_.dim || def_.domain.hi.size() != def_.dim) {
    throw ConfigError("system '" + def_.name + "': domain bounds must have length dim");
  }
  if (def_.boundary.size() != static_cast<std::size_t>(def_.dim)) {
    throw ConfigError("system '" + def_.name + "': one boundary type per axis is required");
  }
  for (Index i = 0; i < def_.dim; ++i) {
    if (!(def_.domain.lo(i) < def_.domain.hi(i))) {
      throw ConfigError("system '" + def_.name + "': domain axis " + std::to_string(i) + " is empty");
    }
    const bool bounded = std::isfinite(def_.domain.lo(i)) && std::isfinite(def_.domain.hi(i));
    if (!bounded && def_.boundary[static_cast<std::size_t>(i)] != Boundary::open) {
      throw ConfigError("system '" + def_.name + "': axis " + std::to_string(i) +
                        " is unbounded, only an open boundary is allowed there");
    }
  }
}

bool SystemSpec::closed() const {
  for (Boundary b : def_.boundary) {
    if (b != Boundary::reflecting && b != Boundary::periodic) return false;
  }
  return true;
}

SystemSpec SystemSpec::with_finite_differences() const {
  SystemDefinition def = def_;
  def.drift_jacobian = nullptr;
  def.noise_derivative = nullptr;
  return SystemSpec(std::move(def));
}

StateVector checked_drift(const SystemSpec& system, const StateVector& x) {
  require_in_domain(system, x, "drift");
  StateVector a = system.drift(x);
  if (a.size() != system.dim()) throw EvaluationError("drift of '" + system.name() + "' has wrong length");
  if (!a.allFinite()) {
    throw EvaluationError("drift of '" + system.name() + "' is not finite at " + format_point(x));
  }
  return a;
}

NoiseMatrix checked_noise(const SystemSpec& system, const StateVector& x) {
  require_in_domain(system, x, "noise");
  NoiseMatrix b = system.noise(x);
  if (b.rows() != system.dim() || b.cols() != system.noise_dim()) {
    throw EvaluationError("noise of '" + system.name() + "' has wrong shape");
  }
  if (!b.allFinite()) {
    throw EvaluationError("noise of '" + system.name() + "' is not finite at " + format_point(x));
  }
  return b;
}

NoiseMatrix noise_derivative(const SystemSpec& system, const StateVector& x, Index axis) {
  NoiseMatrix db;
  if (system.has_noise_derivative()) {
    db = system.definition().noise_derivative(x, axis);
  } else {
    const double h = fd_step(x(axis));
    StateVector xp = x, xm = x;
    xp(axis) += h;
    xm(axis) -= h;
    db = (system.noise(xp) - system.noise(xm)) / (2.0 * h);
  }
  if (!db.allFinite()) {
    throw EvaluationError("noise derivative of '" + system.name() + "' is not finite at " + format_point(x));
  }
  return db;
}

NoiseMatrix drift_jacobian(const SystemSpec& system, const StateVector& x) {
  if (system.has_drift_jacobian()) return system.definition().drift_jacobian(x);
  NoiseMatrix jac(system.dim(), system.dim());
  for (Index m = 0; m < system.dim(); ++m) {
    const double h = fd_step(x(m));
    StateVector xp = x, xm = x;
    xp(m) += h;
    xm(m) -= h;
    jac.col(m) = (system.drift(xp) - system.drift(xm)) / (2.0 * h);
  }
  return jac;
}

namespace {

StateVector nid_from(const SystemSpec& system, const StateVector& x, const NoiseMatrix& b) {
  StateVector a_nid = StateVector::Zero(system.dim());
  for (Index m = 0; m < system.dim(); ++m) {
    // sum_k (d b^{ik}/dx^m) b^{mk}
    a_nid.noalias() += noise_derivative(system, x, m) * b.row(m).transpose();
  }
  return a_nid;
}

StateVector half_div_analytic(const SystemSpec& system, const StateVector& x, const NoiseMatrix& b) {
  StateVector out = StateVector::Zero(system.dim());
  for (Index k = 0; k < system.dim(); ++k) {
    const NoiseMatrix db = noise_derivative(system, x, k);
    // dD^{ik}/dx^k = (dB B^T)^{ik} + (B dB^T)^{ik}
    out.noalias() += 0.5 * (db * b.row(k).transpose() + b * db.row(k).transpose());
  }
  return out;
}

}  // namespace

StateVector noise_induced_drift(const SystemSpec& system, const StateVector& x) {
  return nid_from(system, x, checked_noise(system, x));
}

NoiseMatrix diffusion(const SystemSpec& system, const StateVector& x) {
  return diffusion_matrix(checked_noise(system, x));
}

StateVector half_diffusion_divergence(const SystemSpec& system, const StateVector& x) {
  if (system.has_noise_derivative()) return half_div_analytic(system, x, checked_noise(system, x));
  require_in_domain(system, x, "half_diffusion_divergence");
  StateVector out = StateVector::Zero(system.dim());
  for (Index k = 0; k < system.dim(); ++k) {
    const double h = fd_step(x(k));
    StateVector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    const NoiseMatrix dd = (diffusion_matrix(system.noise(xp)) - diffusion_matrix(system.noise(xm))) / (2.0 * h);
    out += 0.5 * dd.col(k);
  }
  if (!out.allFinite()) throw EvaluationError("diffusion divergence of '" + system.name() + "' is not finite");
  return out;
}

StateVector half_diffusion_divergence_fd(const SystemSpec& system, const StateVector& x) {
  require_in_domain(system, x, "nid_identity_residual");
  StateVector out = StateVector::Zero(system.dim());
  for (Index k = 0; k < system.dim(); ++k) {
    const double h = fd_step(x(k));
    StateVector xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    if (!system.domain().contains(xp) || !system.domain().contains(xm)) {
      throw DomainError("finite-difference stencil at " + format_point(x) + " leaves the domain of '" +
                        system.name() + "'");
    }
    const NoiseMatrix dd =
        (diffusion_matrix(checked_noise(system, xp)) - diffusion_matrix(checked_noise(system, xm))) / (2.0 * h);
    out += 0.5 * dd.col(k);
  }
  return out;
}

EvaluatedCoefficients evaluate(const SystemSpec& system, const StateVector& x, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  EvaluatedCoefficients c;
  c.x = x;
  c.alpha = alpha;
  c.a = checked_drift(system, x);
  c.b = checked_noise(system, x);
  c.d = diffusion_matrix(c.b);
  c.a_nid = nid_from(system, x, c.b);
  c.a_tot = c.a + (alpha - 1.0) * c.a_nid;
  return c;
}

StateVector nid_identity_residual(const SystemSpec& system, const StateVector& x) {
  const StateVector div = half_diffusion_divergence_fd(system, x);
  return noise_induced_drift(system, x) - div;
}

SystemSpec rotate_noise(const SystemSpec& system, const Eigen::MatrixXd& o) {
  if (o.rows() != system.noise_dim() || o.cols() != system.noise_dim()) {
    throw ConfigError("rotate_noise: rotation must be noise_dim x noise_dim");
  }
  SystemDefinition def = system.definition();
  const NoiseMatrix rot = o;
  def.name = system.name() + "-rotated";
  def.noise = [base = def.noise, rot](const StateVector& x) -> NoiseMatrix { return base(x) * rot; };
  if (def.noise_derivative) {
    def.noise_derivative = [base = def.noise_derivative, rot](const StateVector& x, Index axis) -> NoiseMatrix {
      return base(x, axis) * rot;
    };
  }
  return SystemSpec(std::move(def));
}

OrientationVariation symmetrization_orientation(const SystemSpec& system,
                                                const std::vector<StateVector>& probes,
                                                double tolerance) {
  OrientationVariation out;
  bool first = true;
  for (const auto& x : probes) {
    const auto sym = symmetrize(Eigen::MatrixXd(checked_noise(system, x)));
    if (first) {
      out.reference = sym.o;
      first = false;
      continue;
    }
    out.max_deviation = std::max(out.max_deviation, (sym.o - out.reference).cwiseAbs().maxCoeff());
  }
  out.constant = out.max_deviation <= tolerance;
  return out;
}

}  // namespace sdelab
