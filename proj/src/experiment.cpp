#include "sdelab/experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sdelab/coords.hpp"
#include "sdelab/csv.hpp"
#include "sdelab/expression.hpp"
#include "sdelab/fpe.hpp"
#include "sdelab/paths.hpp"
#include "sdelab/validate.hpp"

namespace sdelab {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {
      "coefficients", "symmetrize",     "alpha-integral", "ensemble",       "conditional-increment",
      "martingale",   "fpe-evolve",     "fpe-stationary", "cross-validate", "invariance"};
  return kinds;
}

namespace {

// JSON cannot hold inf/nan; they are written as strings.
Json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

Json vector_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number_json(v(i)));
  return a;
}

Json matrix_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Json a = Json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

// Strict object reader: every key must be consumed, values are type checked,
// and the values actually used (defaults included) are collected in
// `resolved`.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("'" + label() + "' must be a JSON object");
  }

  std::string path(const std::string& k) const { return where_.empty() ? k : where_ + "." + k; }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }

  const Json& raw(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) throw ConfigError("missing required key '" + path(k) + "'");
    return j_.at(k);
  }

  double number(const std::string& k) {
    const Json& v = raw(k);
    if (!v.is_number()) throw ConfigError("'" + path(k) + "' must be a number");
    const double d = v.get<double>();
    resolved[k] = d;
    return d;
  }
  double number(const std::string& k, double def) { return has(k) ? number(k) : (resolved[k] = def, def); }

  Index integer(const std::string& k) {
    const Json& v = raw(k);
    if (v.is_number_integer()) {
      const auto n = v.get<long long>();
      resolved[k] = n;
      return static_cast<Index>(n);
    }
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == std::floor(d) && std::abs(d) < 9e15) {
        resolved[k] = static_cast<long long>(d);
        return static_cast<Index>(d);
      }
    }
    throw ConfigError("'" + path(k) + "' must be an integer");
  }
  Index integer(const std::string& k, Index def) {
    return has(k) ? integer(k) : (resolved[k] = static_cast<long long>(def), def);
  }

  Index positive(const std::string& k, std::optional<Index> def = std::nullopt) {
    const Index n = def && !has(k) ? integer(k, *def) : integer(k);
    if (n < 1) throw ConfigError("'" + path(k) + "' must be positive");
    return n;
  }

  double positive_number(const std::string& k, std::optional<double> def = std::nullopt) {
    const double v = def && !has(k) ? number(k, *def) : number(k);
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("'" + path(k) + "' must be a positive finite number");
    return v;
  }

  std::string string(const std::string& k) {
    const Json& v = raw(k);
    if (!v.is_string()) throw ConfigError("'" + path(k) + "' must be a string");
    resolved[k] = v;
    return v.get<std::string>();
  }
  std::string string(const std::string& k, const std::string& def) {
    return has(k) ? string(k) : (resolved[k] = def, def);
  }

  bool boolean(const std::string& k, bool def) {
    if (!has(k)) {
      resolved[k] = def;
      return def;
    }
    const Json& v = raw(k);
    if (!v.is_boolean()) throw ConfigError("'" + path(k) + "' must be true or false");
    resolved[k] = v;
    return v.get<bool>();
  }

  StateVector vector(const std::string& k) {
    const Json& v = raw(k);
    if (!v.is_array() || v.empty()) throw ConfigError("'" + path(k) + "' must be a non-empty array of numbers");
    StateVector out(static_cast<Index>(v.size()));
    if (out.size() > kMaxDim) throw ConfigError("'" + path(k) + "' has more than 4 entries");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError("'" + path(k) + "' must contain only numbers");
      out(static_cast<Index>(i)) = v[i].get<double>();
    }
    resolved[k] = v;
    return out;
  }

  Eigen::MatrixXd matrix(const std::string& k) {
    const Json& v = raw(k);
    if (!v.is_array() || v.empty() || !v[0].is_array() || v[0].empty()) {
      throw ConfigError("'" + path(k) + "' must be an array of rows");
    }
    Eigen::MatrixXd m(static_cast<Index>(v.size()), static_cast<Index>(v[0].size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array() || v[i].size() != v[0].size()) throw ConfigError("'" + path(k) + "' rows differ in length");
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        if (!v[i][j].is_number()) throw ConfigError("'" + path(k) + "' must contain only numbers");
        m(static_cast<Index>(i), static_cast<Index>(j)) = v[i][j].get<double>();
      }
    }
    resolved[k] = v;
    return m;
  }

  Fields child(const std::string& k) { return Fields(raw(k), path(k)); }

  void adopt(const std::string& k, const Fields& c) { resolved[k] = c.resolved; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) throw ConfigError("unknown key '" + path(item.key()) + "'");
    }
  }

  Json resolved = Json::object();

 private:
  std::string label() const { return where_.empty() ? "config" : where_; }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

double alpha_value(Fields& top) {
  const double a = top.number("alpha");
  if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("'alpha' must lie in [0, 1]");
  return a;
}

std::vector<double> bound_list(const Json& v, const std::string& where, Index dim, double missing) {
  if (!v.is_array() || static_cast<Index>(v.size()) != dim) {
    throw ConfigError("'" + where + "' must have one entry per dimension");
  }
  std::vector<double> out;
  for (const auto& e : v) {
    if (e.is_null()) {
      out.push_back(missing);
    } else if (e.is_number()) {
      out.push_back(e.get<double>());
    } else {
      throw ConfigError("'" + where + "' entries must be numbers or null (unbounded)");
    }
  }
  return out;
}

std::string expression_text(const Json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return format_double(v.get<double>());
  throw ConfigError("'" + where + "' must be an expression string or a number");
}

SystemSpec inline_system(const Json& j, const std::string& where, bool need_name) {
  Fields f(j, where);
  SystemDefinition def;
  def.name = need_name ? f.string("name") : f.string("name", "inline");
  def.description = f.string("description", "user-defined");
  def.dim = f.positive("dim");
  def.noise_dim = f.positive("noise_dim", def.dim);
  if (def.dim > 2) throw ConfigError("'" + f.path("dim") + "' must be 1 or 2");
  if (def.noise_dim > kMaxDim) throw ConfigError("'" + f.path("noise_dim") + "' must be at most 4");
  const VariableMap vars = state_variables(def.dim);

  const Json& drift = f.raw("drift");
  if (!drift.is_array() || static_cast<Index>(drift.size()) != def.dim) {
    throw ConfigError("'" + f.path("drift") + "' must list one expression per dimension");
  }
  auto a = std::make_shared<std::vector<Expression>>();
  for (std::size_t i = 0; i < drift.size(); ++i) {
    a->emplace_back(expression_text(drift[i], f.path("drift")), vars);
  }
  const Json& noise = f.raw("noise");
  if (!noise.is_array() || static_cast<Index>(noise.size()) != def.dim) {
    throw ConfigError("'" + f.path("noise") + "' must have one row per dimension");
  }
  auto b = std::make_shared<std::vector<Expression>>();
  for (const auto& row : noise) {
    if (!row.is_array() || static_cast<Index>(row.size()) != def.noise_dim) {
      throw ConfigError("'" + f.path("noise") + "' rows must have noise_dim entries");
    }
    for (const auto& e : row) b->emplace_back(expression_text(e, f.path("noise")), vars);
  }
  const Index dim = def.dim;
  const Index m = def.noise_dim;
  def.drift = [a, dim](const StateVector& x) {
    StateVector out(dim);
    for (Index i = 0; i < dim; ++i) out(i) = (*a)[static_cast<std::size_t>(i)](x);
    return out;
  };
  def.noise = [b, dim, m](const StateVector& x) {
    NoiseMatrix out(dim, m);
    for (Index i = 0; i < dim; ++i) {
      for (Index k = 0; k < m; ++k) out(i, k) = (*b)[static_cast<std::size_t>(i * m + k)](x);
    }
    return out;
  };
  f.resolved["drift"] = drift;
  f.resolved["noise"] = noise;

  Fields dom = f.child("domain");
  const auto lo = bound_list(dom.raw("lo"), dom.path("lo"), dim, -std::numeric_limits<double>::infinity());
  const auto hi = bound_list(dom.raw("hi"), dom.path("hi"), dim, std::numeric_limits<double>::infinity());
  dom.resolved["lo"] = dom.raw("lo");
  dom.resolved["hi"] = dom.raw("hi");
  dom.finish();
  f.adopt("domain", dom);
  def.domain = Box{StateVector(dim), StateVector(dim)};
  for (Index i = 0; i < dim; ++i) {
    def.domain.lo(i) = lo[static_cast<std::size_t>(i)];
    def.domain.hi(i) = hi[static_cast<std::size_t>(i)];
  }
  const Json& bnd = f.raw("boundary");
  if (!bnd.is_array() || static_cast<Index>(bnd.size()) != dim) {
    throw ConfigError("'" + f.path("boundary") + "' must list one boundary type per dimension");
  }
  for (const auto& e : bnd) {
    if (!e.is_string()) throw ConfigError("'" + f.path("boundary") + "' entries must be strings");
    def.boundary.push_back(boundary_from_string(e.get<std::string>()));
  }
  f.resolved["boundary"] = bnd;
  f.finish();
  return SystemSpec(std::move(def));
}

void register_systems(SystemRegistry& reg, const Json& list) {
  if (!list.is_array()) throw ConfigError("'systems' must be an array of system definitions");
  for (std::size_t i = 0; i < list.size(); ++i) {
    reg.add(inline_system(list[i], "systems[" + std::to_string(i) + "]", true));
  }
}

GridSpec grid_spec(Fields& f, const std::string& key) {
  Fields g = f.child(key);
  GridSpec spec;
  const Json& cells = g.raw("cells");
  if (!cells.is_array() || cells.empty()) throw ConfigError("'" + g.path("cells") + "' must be an array of integers");
  for (const auto& c : cells) {
    if (!c.is_number_integer() || c.get<long long>() < 2) {
      throw ConfigError("'" + g.path("cells") + "' entries must be integers >= 2");
    }
    spec.cells.push_back(static_cast<Index>(c.get<long long>()));
  }
  g.resolved["cells"] = cells;
  if (g.has("lo")) spec.lo = bound_list(g.raw("lo"), g.path("lo"), static_cast<Index>(cells.size()), NAN);
  if (g.has("hi")) spec.hi = bound_list(g.raw("hi"), g.path("hi"), static_cast<Index>(cells.size()), NAN);
  if (!spec.lo.empty()) g.resolved["lo"] = spec.lo;
  if (!spec.hi.empty()) g.resolved["hi"] = spec.hi;
  g.finish();
  f.adopt(key, g);
  return spec;
}

struct InitialSpec {
  std::string kind;
  StateVector x;
  StateVector mean;
  double std_dev = 0.0;
  std::shared_ptr<Expression> density;

  DensityGrid on(const GridGeometry& g) const {
    if (kind == "point") return point_density(g, x);
    if (kind == "uniform") return uniform_density(g);
    if (kind == "gaussian") return gaussian_density(g, mean, std_dev);
    DensityGrid out{g, Eigen::VectorXd(g.size()), 0.0, {}};
    for (Index c = 0; c < g.size(); ++c) {
      const double v = (*density)(g.center(c));
      if (!(v >= 0.0) || !std::isfinite(v)) throw EvaluationError("initial density expression is negative or not finite");
      out.w(c) = v;
    }
    out.normalize();
    return out;
  }

  std::function<double(const StateVector&)> function() const {
    if (kind == "point") throw ConfigError("a point initial condition has no density function; use gaussian, uniform or expression");
    if (kind == "uniform") return [](const StateVector&) { return 1.0; };
    if (kind == "gaussian") {
      return [m = mean, s = std_dev](const StateVector& y) { return std::exp(-0.5 * (y - m).squaredNorm() / (s * s)); };
    }
    return [e = density](const StateVector& y) { return (*e)(y); };
  }
};

InitialSpec initial_spec(Fields& f, const std::string& key, Index dim) {
  Fields g = f.child(key);
  InitialSpec s;
  s.kind = g.string("kind");
  if (s.kind == "point") {
    s.x = g.vector("x");
    if (s.x.size() != dim) throw ConfigError("'" + g.path("x") + "' must have one entry per dimension");
  } else if (s.kind == "gaussian") {
    s.mean = g.vector("mean");
    if (s.mean.size() != dim) throw ConfigError("'" + g.path("mean") + "' must have one entry per dimension");
    s.std_dev = g.positive_number("std");
  } else if (s.kind == "expression") {
    s.density = std::make_shared<Expression>(g.string("density"), state_variables(dim));
  } else if (s.kind != "uniform") {
    throw ConfigError("'" + g.path("kind") + "' must be one of point, uniform, gaussian, expression");
  }
  g.finish();
  f.adopt(key, g);
  return s;
}

CoordinateTransform transform_spec(Fields& f, const std::string& key, Index dim) {
  const Json& v = f.raw(key);
  if (v.is_string()) {
    f.resolved[key] = v;
    if (v.get<std::string>() == "identity") return identity_transform(dim);
    throw ConfigError("'" + f.path(key) + "': unknown transform '" + v.get<std::string>() + "'");
  }
  Fields g = f.child(key);
  const std::string kind = g.string("kind");
  CoordinateTransform t = identity_transform(dim);
  if (kind == "identity") {
  } else if (kind == "affine") {
    const Eigen::MatrixXd m = g.matrix("matrix");
    const StateVector c = g.has("offset") ? g.vector("offset") : StateVector(StateVector::Zero(dim));
    if (m.rows() != dim || m.cols() != dim || c.size() != dim) {
      throw ConfigError("'" + f.path(key) + "': affine matrix and offset must match the system dimension");
    }
    t = affine_transform(m, c);
  } else if (kind == "exp" || kind == "log") {
    std::vector<Index> axes;
    if (g.has("axes")) {
      const Json& a = g.raw("axes");
      if (!a.is_array()) throw ConfigError("'" + g.path("axes") + "' must be an array of axis indices");
      for (const auto& e : a) {
        if (!e.is_number_integer()) throw ConfigError("'" + g.path("axes") + "' must hold integers");
        axes.push_back(static_cast<Index>(e.get<long long>()));
      }
    } else {
      for (Index i = 0; i < dim; ++i) axes.push_back(i);
    }
    g.resolved["axes"] = axes;
    t = kind == "exp" ? exp_transform(dim, axes) : log_transform(dim, axes);
  } else if (kind == "expression") {
    const Json& fw = g.raw("forward");
    const Json& iv = g.raw("inverse");
    if (!fw.is_array() || !iv.is_array() || static_cast<Index>(fw.size()) != dim ||
        static_cast<Index>(iv.size()) != dim) {
      throw ConfigError("'" + f.path(key) + "': forward and inverse need one expression per dimension");
    }
    auto fe = std::make_shared<std::vector<Expression>>();
    auto ie = std::make_shared<std::vector<Expression>>();
    VariableMap yvars;
    for (Index i = 0; i < dim; ++i) yvars.emplace_back("y" + std::to_string(i + 1), static_cast<int>(i));
    if (dim == 1) yvars.emplace_back("y", 0);
    for (Index i = 0; i < dim; ++i) {
      fe->emplace_back(expression_text(fw[static_cast<std::size_t>(i)], g.path("forward")), state_variables(dim));
      ie->emplace_back(expression_text(iv[static_cast<std::size_t>(i)], g.path("inverse")), yvars);
    }
    g.resolved["forward"] = fw;
    g.resolved["inverse"] = iv;
    TransformDefinition def;
    def.name = g.string("name", "expression");
    def.dim = dim;
    def.forward = [fe](const StateVector& x) {
      StateVector y(x.size());
      for (Index i = 0; i < x.size(); ++i) y(i) = (*fe)[static_cast<std::size_t>(i)](x);
      return y;
    };
    def.inverse = [ie](const StateVector& y) {
      StateVector x(y.size());
      for (Index i = 0; i < y.size(); ++i) x(i) = (*ie)[static_cast<std::size_t>(i)](y);
      return x;
    };
    t = CoordinateTransform(std::move(def));
  } else {
    throw ConfigError("'" + g.path("kind") + "' must be one of identity, affine, exp, log, expression");
  }
  g.finish();
  f.adopt(key, g);
  return t;
}

struct Criterion {
  std::string name;
  double measured = 0.0;
  std::string relation;  // e.g. "<=", "in"
  Json tolerance;
  bool passed = false;
};

struct Result {
  Json measured = Json::object();
  std::vector<Criterion> criteria;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;
};

struct Context {
  std::string kind;
  SystemRegistry registry;
  std::optional<SystemSpec> system;
  double alpha = 0.0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  fs::path out_dir;
};

using Plan = std::function<void(const Context&, Result&)>;

// Tolerance reader: always echoes the value used.
class Tolerances {
 public:
  explicit Tolerances(Fields& f) : f_(f) {}
  double get(const std::string& k, double def) {
    const double v = f_.number(k, def);
    if (!(v >= 0.0)) throw ConfigError("'" + f_.path(k) + "' must be nonnegative");
    return v;
  }
  // Only checked when configured.
  std::optional<double> optional(const std::string& k) {
    if (!f_.has(k)) return std::nullopt;
    return get(k, 0.0);
  }

 private:
  Fields& f_;
};

Criterion upper(const std::string& name, double measured, double tol) {
  return {name, measured, "<=", tol, measured <= tol};
}

std::vector<std::string> axis_names(const std::string& prefix, Index dim) {
  std::vector<std::string> v;
  for (Index i = 0; i < dim; ++i) v.push_back(prefix + std::to_string(i + 1));
  return v;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const SystemSpec& need_system(const Context& c) {
  if (!c.system) throw ConfigError("experiment '" + c.kind + "' needs 'system'");
  return *c.system;
}

struct Moments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

Moments density_moments(const DensityGrid& g) {
  const Index dim = g.geometry.dim();
  const double vol = g.geometry.cell_volume();
  const double mass = g.total_mass();
  Moments m{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  for (Index c = 0; c < g.geometry.size(); ++c) m.mean += g.w(c) * vol * g.geometry.center(c);
  m.mean /= mass;
  for (Index c = 0; c < g.geometry.size(); ++c) {
    m.variance += g.w(c) * vol * (g.geometry.center(c) - m.mean).cwiseAbs2();
  }
  m.variance /= mass;
  return m;
}

void write_density(const fs::path& file, const DensityGrid& g, const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra = {}) {
  std::vector<std::string> header = axis_names("x", g.geometry.dim());
  header.push_back("w");
  for (const auto& [name, _] : extra) header.push_back(name);
  CsvWriter csv(file, header);
  for (Index c = 0; c < g.geometry.size(); ++c) {
    const StateVector x = g.geometry.center(c);
    for (Index i = 0; i < x.size(); ++i) csv.cell(x(i));
    csv.cell(g.w(c));
    for (const auto& [_, v] : extra) csv.cell(v(c));
    csv.end_row();
  }
}

// ---- experiment parsers: validate everything, return the work to do ----

Plan plan_coefficients(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const Json& pts = p.raw("points");
  if (!pts.is_array() || pts.empty()) throw ConfigError("'params.points' must be a non-empty array of points");
  std::vector<StateVector> points;
  for (const auto& q : pts) {
    if (!q.is_array() || static_cast<Index>(q.size()) != sys.dim()) {
      throw ConfigError("'params.points' entries must have one coordinate per dimension");
    }
    StateVector x(sys.dim());
    for (Index i = 0; i < sys.dim(); ++i) x(i) = q[static_cast<std::size_t>(i)].get<double>();
    points.push_back(x);
  }
  p.resolved["points"] = pts;
  const bool fd = p.boolean("finite_differences", false);
  const std::optional<double> res_tol = tol.optional("identity_residual");
  return [points, fd, res_tol](const Context& c, Result& r) {
    const SystemSpec sys = fd ? c.system->with_finite_differences() : *c.system;
    const Index n = sys.dim();
    const Index m = sys.noise_dim();
    std::vector<std::string> header = axis_names("x", n);
    header = concat(header, axis_names("a", n));
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < m; ++k) header.push_back("b" + std::to_string(i + 1) + std::to_string(k + 1));
    }
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < n; ++k) header.push_back("d" + std::to_string(i + 1) + std::to_string(k + 1));
    }
    header = concat(header, axis_names("a_nid", n));
    header = concat(header, axis_names("a_tot", n));
    header = concat(header, axis_names("identity_residual", n));
    CsvWriter csv(c.out_dir / "coefficients.csv", header);
    double max_res = 0.0;
    bool any_res = false;
    for (const auto& x : points) {
      const auto e = evaluate(sys, x, c.alpha);
      StateVector res = StateVector::Constant(n, std::numeric_limits<double>::quiet_NaN());
      try {
        res = nid_identity_residual(sys, x);
        max_res = std::max(max_res, res.cwiseAbs().maxCoeff());
        any_res = true;
      } catch (const DomainError&) {
        r.warnings.push_back("identity residual skipped near the boundary");
      }
      for (Index i = 0; i < n; ++i) csv.cell(x(i));
      for (Index i = 0; i < n; ++i) csv.cell(e.a(i));
      for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < m; ++k) csv.cell(e.b(i, k));
      }
      for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < n; ++k) csv.cell(e.d(i, k));
      }
      for (Index i = 0; i < n; ++i) csv.cell(e.a_nid(i));
      for (Index i = 0; i < n; ++i) csv.cell(e.a_tot(i));
      for (Index i = 0; i < n; ++i) csv.cell(res(i));
      csv.end_row();
    }
    r.outputs.push_back("coefficients.csv");
    r.measured["points"] = static_cast<long long>(points.size());
    r.measured["max_identity_residual"] = any_res ? number_json(max_res) : Json(nullptr);
    if (res_tol) r.criteria.push_back(upper("identity_residual", any_res ? max_res : NAN, *res_tol));
  };
}

Plan plan_symmetrize(Fields& p, Tolerances& tol, Context& ctx) {
  const double t_sym = tol.get("symmetry", 1e-10);
  const double t_orth = tol.get("orthogonality", 1e-12);
  const double t_diff = tol.get("diffusion", 1e-10);
  const double t_orient = tol.get("orientation", 1e-8);
  std::vector<StateVector> points;
  std::optional<Eigen::MatrixXd> matrix;
  if (p.has("matrix")) {
    matrix = p.matrix("matrix");
    if (p.has("points")) throw ConfigError("'params' takes either 'matrix' or 'points', not both");
  } else {
    const SystemSpec& sys = need_system(ctx);
    const Json& pts = p.raw("points");
    if (!pts.is_array() || pts.empty()) throw ConfigError("'params.points' must be a non-empty array of points");
    for (const auto& q : pts) {
      if (!q.is_array() || static_cast<Index>(q.size()) != sys.dim()) {
        throw ConfigError("'params.points' entries must have one coordinate per dimension");
      }
      StateVector x(sys.dim());
      for (Index i = 0; i < sys.dim(); ++i) x(i) = q[static_cast<std::size_t>(i)].get<double>();
      points.push_back(x);
    }
    p.resolved["points"] = pts;
  }
  return [=](const Context& c, Result& r) {
    std::vector<Eigen::MatrixXd> inputs;
    if (matrix) {
      inputs.push_back(*matrix);
    } else {
      for (const auto& x : points) inputs.push_back(checked_noise(*c.system, x));
    }
    const Index n = inputs.front().rows();
    std::vector<std::string> header = {"index"};
    if (!matrix) header = concat(header, axis_names("x", n));
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < n; ++k) header.push_back("b_star" + std::to_string(i + 1) + std::to_string(k + 1));
    }
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < n; ++k) header.push_back("o" + std::to_string(i + 1) + std::to_string(k + 1));
    }
    header = concat(header, {"symmetry_error", "orthogonality_error", "diffusion_error", "padded"});
    CsvWriter csv(c.out_dir / "symmetrize.csv", header);
    double worst_sym = 0.0, worst_orth = 0.0, worst_diff = 0.0;
    for (std::size_t q = 0; q < inputs.size(); ++q) {
      const auto s = symmetrize(inputs[q]);
      const double e_sym = (s.b_star - s.b_star.transpose()).cwiseAbs().maxCoeff();
      const double e_orth = (s.o * s.o.transpose() - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
      const double e_diff =
          (s.b_star * s.b_star.transpose() - inputs[q] * inputs[q].transpose()).cwiseAbs().maxCoeff();
      worst_sym = std::max(worst_sym, e_sym);
      worst_orth = std::max(worst_orth, e_orth);
      worst_diff = std::max(worst_diff, e_diff);
      csv.cell(static_cast<long long>(q));
      if (!matrix) {
        for (Index i = 0; i < n; ++i) csv.cell(points[q](i));
      }
      for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < n; ++k) csv.cell(s.b_star(i, k));
      }
      for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < n; ++k) csv.cell(s.o(i, k));
      }
      csv.cell(e_sym).cell(e_orth).cell(e_diff).cell(static_cast<long long>(s.padded));
      csv.end_row();
    }
    r.outputs.push_back("symmetrize.csv");
    if (matrix) {
      const auto s = symmetrize(*matrix);
      r.measured["b_star"] = matrix_json(s.b_star);
      r.measured["o"] = matrix_json(s.o);
      r.measured["padded"] = s.padded;
    } else {
      const auto v = symmetrization_orientation(*c.system, points, t_orient);
      r.measured["orientation_max_deviation"] = v.max_deviation;
      r.measured["orientation_constant"] = v.constant;
    }
    r.measured["symmetry_error"] = worst_sym;
    r.measured["orthogonality_error"] = worst_orth;
    r.measured["diffusion_error"] = worst_diff;
    r.criteria.push_back(upper("symmetry", worst_sym, t_sym));
    r.criteria.push_back(upper("orthogonality", worst_orth, t_orth));
    r.criteria.push_back(upper("diffusion_preserved", worst_diff, t_diff));
  };
}

Plan plan_alpha_integral(Fields& p, Tolerances& tol, Context& ctx) {
  const double dt = p.positive_number("dt", 1.0);
  const Index n_sub = p.positive("n_sub", 1000);
  const Index n_samples = p.positive("n_samples", 100000);
  if (n_sub < 100) throw ConfigError("'params.n_sub' must be at least 100");
  if (n_samples < 10000) throw ConfigError("'params.n_samples' must be at least 10000");
  const double band = tol.get("mean_se_band", 4.0);
  const double var_rel = tol.get("variance_rel", 0.05);
  (void)ctx;
  return [=](const Context& c, Result& r) {
    const auto s = alpha_integral_experiment(c.alpha, dt, n_sub, n_samples, c.seed, c.threads);
    const double expected_mean = c.alpha * dt;
    const double expected_var = 0.5 * dt * dt;
    CsvWriter csv(c.out_dir / "alpha_integral.csv",
                  {"alpha", "dt", "n_sub", "n_samples", "mean", "mean_se", "variance", "variance_se",
                   "expected_mean", "expected_variance"});
    csv.cell(c.alpha).cell(dt).cell(static_cast<long long>(n_sub)).cell(static_cast<long long>(n_samples));
    csv.cell(s.mean).cell(s.mean_se).cell(s.variance).cell(s.variance_se).cell(expected_mean).cell(expected_var);
    csv.end_row();
    r.outputs.push_back("alpha_integral.csv");
    r.measured["mean"] = s.mean;
    r.measured["mean_se"] = s.mean_se;
    r.measured["variance"] = s.variance;
    r.measured["variance_se"] = s.variance_se;
    r.measured["expected_mean"] = expected_mean;
    r.measured["expected_variance"] = expected_var;
    r.criteria.push_back(upper("mean_z", std::abs(s.mean - expected_mean) / s.mean_se, band));
    r.criteria.push_back(upper("variance_rel_error", std::abs(s.variance - expected_var) / expected_var, var_rel));
  };
}

Stepper stepper_param(Fields& p) {
  const std::string s = p.string("stepper", "ito-equivalent");
  try {
    return stepper_from_string(s);
  } catch (const ConfigError&) {
    throw ConfigError("'params.stepper' must be ito-equivalent or alpha-point");
  }
}

Index step_count(double t_end, double dt, const std::string& where) {
  const double ratio = t_end / dt;
  const auto n = static_cast<Index>(std::llround(ratio));
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio) {
    throw ConfigError("'" + where + "' must be a whole multiple of dt");
  }
  return n;
}

Plan plan_ensemble(Fields& p, Tolerances&, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const InitialSpec init = initial_spec(p, "initial", sys.dim());
  std::optional<GridSpec> grid;
  if (init.kind != "point") grid = grid_spec(p, "grid");
  EnsembleOptions opt;
  opt.dt = p.positive_number("dt");
  opt.t_end = p.positive_number("t_end");
  opt.n_paths = p.positive("n_paths");
  opt.stepper = stepper_param(p);
  opt.record_every = p.positive("record_every", 1);
  const Index steps = step_count(opt.t_end, opt.dt, "params.t_end");
  if (steps % opt.record_every != 0) throw ConfigError("'params.record_every' must divide the number of steps");
  const bool write_paths = p.boolean("write_paths", false);
  return [=](const Context& c, Result& r) {
    EnsembleOptions o = opt;
    o.alpha = c.alpha;
    o.master_seed = c.seed;
    o.threads = c.threads;
    const SystemSpec& s = *c.system;
    InitialCondition ic = init.kind == "point" ? InitialCondition(init.x)
                                               : InitialCondition(init.on(grid->geometry(s.domain())));
    const PathEnsemble ens = simulate_ensemble(s, ic, o);
    r.warnings.insert(r.warnings.end(), ens.warnings.begin(), ens.warnings.end());
    const Index n = ens.dim;
    CsvWriter mom(c.out_dir / "ensemble_moments.csv",
                  concat(concat({"t"}, concat(axis_names("mean", n), axis_names("mean_se", n))),
                         concat(axis_names("variance", n), {"absorbed_fraction"})));
    Eigen::VectorXd mean, se;
    for (std::size_t k = 0; k < ens.times.size(); ++k) {
      const Eigen::MatrixXd& snap = ens.snapshots[k];
      mean_and_standard_error(snap, mean, se);
      const Eigen::VectorXd var = se.cwiseAbs2() * static_cast<double>(ens.n_paths);
      Index absorbed = 0;
      for (Index q = 0; q < ens.n_paths; ++q) absorbed += ens.absorbed_by(q, ens.times[k]) ? 1 : 0;
      mom.cell(ens.times[k]);
      for (Index i = 0; i < n; ++i) mom.cell(mean(i));
      for (Index i = 0; i < n; ++i) mom.cell(se(i));
      for (Index i = 0; i < n; ++i) mom.cell(var(i));
      mom.cell(static_cast<double>(absorbed) / static_cast<double>(ens.n_paths));
      mom.end_row();
      if (k + 1 == ens.times.size()) {
        r.measured["final_mean"] = vector_json(mean);
        r.measured["final_variance"] = vector_json(var);
        r.measured["absorbed_fraction"] = static_cast<double>(absorbed) / static_cast<double>(ens.n_paths);
      }
    }
    r.outputs.push_back("ensemble_moments.csv");
    if (write_paths) {
      CsvWriter pc(c.out_dir / "paths.csv", concat({"path", "t"}, axis_names("x", n)));
      for (Index q = 0; q < ens.n_paths; ++q) {
        for (std::size_t k = 0; k < ens.times.size(); ++k) {
          pc.cell(static_cast<long long>(q)).cell(ens.times[k]);
          for (Index i = 0; i < n; ++i) pc.cell(ens.snapshots[k](q, i));
          pc.end_row();
        }
      }
      r.outputs.push_back("paths.csv");
    }
    r.measured["n_paths"] = static_cast<long long>(ens.n_paths);
    r.measured["records"] = static_cast<long long>(ens.times.size());
  };
}

Plan plan_conditional(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const StateVector x = p.vector("x");
  if (x.size() != sys.dim()) throw ConfigError("'params.x' must have one entry per dimension");
  const Index n_paths = p.positive("n_paths");
  std::optional<double> dt;
  if (p.has("dt") && p.raw("dt").is_string()) {
    if (p.string("dt") != "auto") throw ConfigError("'params.dt' must be a number or \"auto\"");
  } else {
    dt = p.positive_number("dt");
  }
  const Stepper stepper = stepper_param(p);
  const double band = tol.get("se_band", 4.0);
  return [=](const Context& c, Result& r) {
    const SystemSpec& s = *c.system;
    double step = 0.0;
    if (dt) {
      step = *dt;
    } else {
      // 25% above the threshold so sampling noise in the SE does not undo it
      step = 1.25 * resolving_conditional_dt(s, x, n_paths);
      if (!std::isfinite(step)) {
        step = 1e-3;
        r.warnings.push_back("a_nid(x) = 0; dt = 1e-3 used");
      }
      r.measured["dt_auto"] = step;
    }
    const auto rep = conditional_increment_report(s, c.alpha, x, step, n_paths, c.seed, stepper, c.threads);
    CsvWriter csv(c.out_dir / "conditional_increment.csv",
                  {"component", "empirical_mean", "standard_error", "prediction_sde_premodel",
                   "prediction_ito_form", "prediction_paper_tot", "a_nid"});
    double worst = 0.0;
    for (Index i = 0; i < s.dim(); ++i) {
      csv.cell(static_cast<long long>(i + 1)).cell(rep.empirical_mean_increment(i)).cell(rep.standard_error(i));
      csv.cell(rep.prediction_sde_premodel(i)).cell(rep.prediction_ito_form(i)).cell(rep.prediction_paper_tot(i));
      csv.cell(rep.a_nid(i));
      csv.end_row();
      worst = std::max(worst,
                       std::abs(rep.empirical_mean_increment(i) - rep.prediction_ito_form(i)) / rep.standard_error(i));
    }
    r.outputs.push_back("conditional_increment.csv");
    r.measured["dt"] = step;
    r.measured["empirical_mean_increment"] = vector_json(rep.empirical_mean_increment);
    r.measured["standard_error"] = vector_json(rep.standard_error);
    r.measured["prediction_sde_premodel"] = vector_json(rep.prediction_sde_premodel);
    r.measured["prediction_ito_form"] = vector_json(rep.prediction_ito_form);
    r.measured["prediction_paper_tot"] = vector_json(rep.prediction_paper_tot);
    r.measured["nid_resolution"] = number_json(rep.nid_resolution);
    r.measured["resolvable"] = rep.resolvable;
    if (!rep.resolvable && rep.a_nid.cwiseAbs().maxCoeff() > 0.0) {
      r.warnings.push_back("noise-induced drift not resolved at 10 standard errors; raise n_paths or dt");
    }
    r.criteria.push_back(upper("ito_form_z", worst, band));
  };
}

Plan plan_martingale(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const StateVector x0 = p.vector("x0");
  if (x0.size() != sys.dim()) throw ConfigError("'params.x0' must have one entry per dimension");
  const double dt = p.positive_number("dt");
  const double t_end = p.positive_number("t_end");
  const Index n_paths = p.positive("n_paths");
  const Index record_every = p.positive("record_every", 1);
  const Stepper stepper = stepper_param(p);
  if (step_count(t_end, dt, "params.t_end") % record_every != 0) {
    throw ConfigError("'params.record_every' must divide the number of steps");
  }
  const std::string expect = p.string("expect", "none");
  if (expect != "none" && expect != "martingale" && expect != "nid-drift") {
    throw ConfigError("'params.expect' must be none, martingale or nid-drift");
  }
  double t_max = t_end;
  double band = 0.0;
  if (expect != "none") band = tol.get("se_band", 4.0);
  if (expect == "nid-drift") t_max = p.positive_number("t_max", t_end);
  return [=](const Context& c, Result& r) {
    const auto series =
        martingale_deviation(*c.system, c.alpha, x0, dt, t_end, n_paths, c.seed, record_every, stepper, c.threads);
    const Index n = x0.size();
    CsvWriter csv(c.out_dir / "martingale.csv",
                  concat(concat({"t"}, concat(axis_names("mean_displacement", n), axis_names("standard_error", n))),
                         concat({"deviation", "deviation_se"}, axis_names("nid_prediction", n))));
    double worst = 0.0;
    for (const auto& pt : series.points) {
      const StateVector pred = series.a_nid_x0 * pt.t;
      csv.cell(pt.t);
      for (Index i = 0; i < n; ++i) csv.cell(pt.mean_displacement(i));
      for (Index i = 0; i < n; ++i) csv.cell(pt.standard_error(i));
      csv.cell(pt.deviation).cell(pt.deviation_se);
      for (Index i = 0; i < n; ++i) csv.cell(pred(i));
      csv.end_row();
      if (pt.t <= 0.0 || pt.t > t_max * (1 + 1e-12)) continue;
      for (Index i = 0; i < n; ++i) {
        if (!(pt.standard_error(i) > 0.0)) continue;
        const double target = expect == "nid-drift" ? pred(i) : 0.0;
        worst = std::max(worst, std::abs(pt.mean_displacement(i) - target) / pt.standard_error(i));
      }
    }
    r.outputs.push_back("martingale.csv");
    r.measured["a_nid_x0"] = vector_json(series.a_nid_x0);
    r.measured["final_deviation"] = series.points.back().deviation;
    r.measured["final_deviation_se"] = series.points.back().deviation_se;
    r.measured["max_z"] = worst;
    if (expect == "martingale") r.criteria.push_back(upper("martingale_z", worst, band));
    if (expect == "nid-drift") r.criteria.push_back(upper("nid_drift_z", worst, band));
  };
}

void density_measurements(const DensityGrid& g, Result& r) {
  const Moments m = density_moments(g);
  double box_volume = 1.0;
  for (const auto& ax : g.geometry.axes()) box_volume *= ax.hi - ax.lo;
  r.measured["mass"] = g.total_mass();
  r.measured["min_w"] = g.w.minCoeff();
  r.measured["mean"] = vector_json(m.mean);
  r.measured["variance"] = vector_json(m.variance);
  r.measured["max_abs_deviation_from_uniform"] = (g.w.array() - 1.0 / box_volume).abs().maxCoeff();
}

Plan plan_fpe_evolve(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const GridSpec grid = grid_spec(p, "grid");
  const GridGeometry geometry = grid.geometry(sys.domain());
  const InitialSpec init = initial_spec(p, "initial", sys.dim());
  const double t_end = p.positive_number("t_end");
  std::optional<double> dt;
  if (p.has("dt")) dt = p.positive_number("dt");
  const double safety = p.positive_number("safety", 0.4);
  const bool closed = sys.closed();
  double mass_tol = 0.0;
  if (closed) mass_tol = tol.get("mass_per_step", 1e-12);
  return [=](const Context& c, Result& r) {
    const FokkerPlanckOperator op(*c.system, c.alpha, geometry);
    const DensityGrid w0 = init.on(geometry);
    DensityGrid w;
    double step = 0.0;
    if (dt) {
      step = *dt;
      w = evolve(op, w0, step, step_count(t_end, step, "params.t_end"));
    } else {
      w = evolve_for(op, w0, t_end, safety);
      step = t_end / static_cast<double>(std::max<Index>(w.ledger.steps, 1));
    }
    const CurrentField j = op.current(w.w);
    const Eigen::VectorXd gj = gradient_current_product(w, j);
    write_density(c.out_dir / "density.csv", w, {{"w_initial", w0.w}});
    {
      std::vector<std::string> header = axis_names("x", geometry.dim());
      header = concat(header, axis_names("J", geometry.dim()));
      header.push_back("grad_w_dot_J");
      CsvWriter csv(c.out_dir / "current.csv", header);
      for (Index k = 0; k < geometry.size(); ++k) {
        const StateVector x = geometry.center(k);
        for (Index i = 0; i < x.size(); ++i) csv.cell(x(i));
        for (Index i = 0; i < geometry.dim(); ++i) csv.cell(j.cell(k, i));
        csv.cell(gj(k));
        csv.end_row();
      }
    }
    r.outputs.push_back("density.csv");
    r.outputs.push_back("current.csv");
    density_measurements(w, r);
    r.measured["dt"] = step;
    r.measured["steps"] = static_cast<long long>(w.ledger.steps);
    r.measured["initial_mass"] = w.ledger.initial_mass;
    r.measured["max_mass_change_per_step"] = w.ledger.max_step_change;
    r.measured["max_grad_w_dot_J"] = gj.maxCoeff();
    if (closed) r.criteria.push_back(upper("mass_per_step", w.ledger.max_step_change, mass_tol));
  };
}

Plan plan_fpe_stationary(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  if (!sys.closed()) throw ConfigError("fpe-stationary needs reflecting or periodic boundaries on every axis");
  const GridSpec grid = grid_spec(p, "grid");
  const GridGeometry geometry = grid.geometry(sys.domain());
  const double res_tol = tol.get("residual", 1e-10);
  return [=](const Context& c, Result& r) {
    const FokkerPlanckOperator op(*c.system, c.alpha, geometry);
    const DensityGrid w = stationary(op);
    write_density(c.out_dir / "density.csv", w);
    r.outputs.push_back("density.csv");
    density_measurements(w, r);
    const double res = operator_residual(op, w.w);
    r.measured["residual"] = res;
    r.criteria.push_back(upper("residual", res, res_tol));
  };
}

Plan plan_cross_validate(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const GridSpec grid = grid_spec(p, "grid");
  const GridGeometry geometry = grid.geometry(sys.domain());
  const InitialSpec init = initial_spec(p, "initial", sys.dim());
  const double t_end = p.positive_number("t_end");
  MonteCarloParams mc;
  mc.n_paths = p.positive("n_paths");
  mc.dt = p.positive_number("dt");
  mc.stepper = stepper_param(p);
  step_count(t_end, mc.dt, "params.t_end");
  const double l1_tol = tol.get("l1", 0.05);
  const double z_tol = tol.get("max_abs_z", 5.0);
  const double z3_tol = tol.get("fraction_z_above_3", 0.01);
  return [=](const Context& c, Result& r) {
    MonteCarloParams m = mc;
    m.seed = c.seed;
    m.threads = c.threads;
    const InitialCondition ic = init.kind == "point" ? InitialCondition(init.x) : InitialCondition(init.on(geometry));
    const auto rep = cross_validate(*c.system, c.alpha, ic, t_end, m, grid);
    r.warnings.insert(r.warnings.end(), rep.warnings.begin(), rep.warnings.end());
    const DensityGrid h = rep.histogram.as_density(false);
    std::vector<std::string> header = axis_names("x", geometry.dim());
    header = concat(header, {"count", "histogram_density", "histogram_se", "fpe_density", "z"});
    CsvWriter csv(c.out_dir / "histogram.csv", header);
    const double frac = rep.histogram.counted_fraction();
    for (Index k = 0; k < geometry.size(); ++k) {
      const StateVector x = geometry.center(k);
      for (Index i = 0; i < x.size(); ++i) csv.cell(x(i));
      csv.cell(static_cast<long long>(rep.histogram.counts(k))).cell(h.w(k)).cell(rep.histogram.std_error(k) * frac);
      csv.cell(rep.fpe.w(k)).cell(rep.z(k));
      csv.end_row();
    }
    r.outputs.push_back("histogram.csv");
    r.measured["l1"] = rep.l1;
    r.measured["ks"] = number_json(rep.ks);
    r.measured["max_abs_z"] = number_json(rep.max_abs_z);
    r.measured["fraction_z_above_3"] = rep.fraction_z_above_3;
    r.measured["absorbed_fraction"] = rep.absorbed_fraction;
    r.measured["outside_fraction"] =
        static_cast<double>(rep.histogram.n_outside) / static_cast<double>(rep.histogram.n_paths);
    r.measured["fpe_mass"] = rep.fpe_mass;
    r.criteria.push_back(upper("l1", rep.l1, l1_tol));
    r.criteria.push_back(upper("max_abs_z", rep.max_abs_z, z_tol));
    r.criteria.push_back(upper("fraction_z_above_3", rep.fraction_z_above_3, z3_tol));
  };
}

Plan plan_invariance(Fields& p, Tolerances& tol, Context& ctx) {
  const SystemSpec& sys = need_system(ctx);
  const CoordinateTransform t = transform_spec(p, "transform", sys.dim());
  InvarianceParams ip;
  ip.grid = grid_spec(p, "grid");
  ip.grid.geometry(sys.domain());
  const InitialSpec init = initial_spec(p, "initial", sys.dim());
  ip.initial = init.function();
  ip.t_end = p.positive_number("t_end", 0.1);
  ip.safety = p.positive_number("safety", 0.4);
  const bool refine = p.boolean("refine", true);
  const double l1_tol = tol.get("l1", 0.02);
  double ratio_min = 0.0, ratio_max = 0.0, exact = 0.0;
  if (refine) {
    ratio_min = tol.get("ratio_min", 3.0);
    ratio_max = tol.get("ratio_max", 5.0);
    exact = tol.get("exact", 1e-12);
  }
  return [=](const Context& c, Result& r) {
    const SystemSpec& s = *c.system;
    auto dump = [&](const std::string& file, const InvarianceReport& rep) {
      write_density(c.out_dir / file, rep.y_solution, {{"mapped_x_solution", rep.mapped_x_solution.w}});
      r.outputs.push_back(file);
    };
    double violation = 0.0;
    for (const auto& x : domain_probes(s.domain())) {
      try {
        violation = std::max(violation, contravariance_violation(s, t, c.alpha, x).cwiseAbs().maxCoeff());
      } catch (const DomainError&) {
      }
    }
    r.measured["contravariance_violation"] = violation;
    if (refine) {
      const auto ref = invariance_refinement(s, t, c.alpha, ip);
      dump("invariance.csv", ref.baseline);
      dump("invariance_refined.csv", ref.refined);
      r.measured["l1_mismatch"] = ref.baseline.l1_mismatch;
      r.measured["l1_mismatch_refined"] = ref.refined.l1_mismatch;
      r.measured["refinement_ratio"] = number_json(ref.ratio);
      r.criteria.push_back(upper("l1_mismatch", ref.baseline.l1_mismatch, l1_tol));
      const bool is_exact = ref.baseline.l1_mismatch < exact && ref.refined.l1_mismatch < exact;
      r.measured["exact_discrete_invariance"] = is_exact;
      Criterion cr{"refinement_ratio", ref.ratio, "in", Json::array({ratio_min, ratio_max}),
                   is_exact || (ref.ratio >= ratio_min && ref.ratio <= ratio_max)};
      r.criteria.push_back(cr);
    } else {
      const auto rep = invariance_check(s, t, c.alpha, ip);
      dump("invariance.csv", rep);
      r.measured["l1_mismatch"] = rep.l1_mismatch;
      r.criteria.push_back(upper("l1_mismatch", rep.l1_mismatch, l1_tol));
    }
  };
}

struct Prepared {
  Context ctx;
  Plan plan;
  Json config;
  Json resolved;
  Json tolerances;
};

Prepared prepare(const std::string& text, const RunOverrides& ov) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Prepared out;
  out.config = j;
  Fields top(j, "");
  static const std::set<std::string> known = {"experiment", "system", "systems",    "alpha",     "seed",
                                              "threads",    "params", "tolerances", "output_dir"};
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError("unknown key '" + item.key() + "'");
  }
  Context& ctx = out.ctx;
  ctx.kind = top.string("experiment");
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), ctx.kind) == kinds.end()) {
    std::string all;
    for (const auto& k : kinds) all += (all.empty() ? "" : ", ") + k;
    throw ConfigError("'experiment' must be one of: " + all);
  }
  if (top.has("systems")) register_systems(ctx.registry, top.raw("systems"));
  if (top.has("system")) {
    const Json& s = top.raw("system");
    if (s.is_string()) {
      ctx.system = ctx.registry.get(s.get<std::string>());
    } else {
      ctx.system = inline_system(s, "system", false);
    }
    top.resolved["system"] = ctx.system->name();
  }
  const bool uses_alpha = ctx.kind != "symmetrize";
  if (uses_alpha) ctx.alpha = alpha_value(top);
  if (top.has("seed")) {
    const Index s = top.integer("seed");
    if (s < 0) throw ConfigError("'seed' must be nonnegative");
    ctx.seed = static_cast<std::uint64_t>(s);
  } else {
    top.resolved["seed"] = 1;
  }
  if (ov.seed) ctx.seed = *ov.seed;
  top.resolved["seed"] = ctx.seed;
  ctx.threads = static_cast<unsigned>(top.positive("threads", 1));
  if (ov.threads) ctx.threads = *ov.threads;
  top.resolved["threads"] = ctx.threads;
  ctx.out_dir = top.has("output_dir") ? fs::path(top.string("output_dir")) : fs::path("sdelab-out") / ctx.kind;
  if (ov.output_dir) ctx.out_dir = *ov.output_dir;
  top.resolved["output_dir"] = ctx.out_dir.string();

  Json empty = Json::object();
  Fields params = top.has("params") ? top.child("params") : Fields(empty, "params");
  Fields tolf = top.has("tolerances") ? top.child("tolerances") : Fields(empty, "tolerances");
  Tolerances tol(tolf);

  static const std::map<std::string, Plan (*)(Fields&, Tolerances&, Context&)> planners = {
      {"coefficients", plan_coefficients},
      {"symmetrize", plan_symmetrize},
      {"alpha-integral", plan_alpha_integral},
      {"ensemble", plan_ensemble},
      {"conditional-increment", plan_conditional},
      {"martingale", plan_martingale},
      {"fpe-evolve", plan_fpe_evolve},
      {"fpe-stationary", plan_fpe_stationary},
      {"cross-validate", plan_cross_validate},
      {"invariance", plan_invariance},
  };
  out.plan = planners.at(ctx.kind)(params, tol, ctx);
  params.finish();
  tolf.finish();
  top.finish();
  top.resolved["params"] = params.resolved;
  out.resolved = top.resolved;
  out.tolerances = tolf.resolved;
  return out;
}

std::string describe_criterion(const Criterion& c) {
  std::ostringstream os;
  os << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << format_double(c.measured) << " (" << c.relation << " "
     << c.tolerance.dump() << ")";
  return os.str();
}

}  // namespace

RunOutcome run_config_text(const std::string& json_text, const RunOverrides& overrides, std::ostream& log) {
  RunOutcome outcome;
  Prepared prep;
  try {
    prep = prepare(json_text, overrides);
  } catch (const ConfigError& e) {
    outcome.exit_code = exit_config_error;
    outcome.message = std::string("config error: ") + e.what();
    log << outcome.message << '\n';
    return outcome;
  } catch (const std::exception& e) {
    outcome.exit_code = exit_config_error;
    outcome.message = std::string("config error: ") + e.what();
    log << outcome.message << '\n';
    return outcome;
  }

  outcome.output_dir = prep.ctx.out_dir;
  Result result;
  try {
    fs::create_directories(prep.ctx.out_dir);
    prep.plan(prep.ctx, result);
  } catch (const ConfigError& e) {
    outcome.exit_code = exit_config_error;
    outcome.message = std::string("config error: ") + e.what();
    log << outcome.message << '\n';
    return outcome;
  } catch (const std::exception& e) {
    outcome.exit_code = exit_runtime_error;
    outcome.message = std::string("runtime error in '") + prep.ctx.kind + "': " + e.what();
    log << outcome.message << '\n';
    return outcome;
  }

  bool passed = true;
  Json criteria = Json::array();
  for (const auto& c : result.criteria) {
    passed = passed && c.passed;
    criteria.push_back(Json{{"name", c.name},
                            {"measured", number_json(c.measured)},
                            {"relation", c.relation},
                            {"tolerance", c.tolerance},
                            {"passed", c.passed}});
  }
  Json summary;
  summary["tool"] = "sdelab";
  summary["version"] = kVersion;
  summary["experiment"] = prep.ctx.kind;
  if (prep.ctx.system) {
    summary["system"] = prep.ctx.system->name();
    summary["system_description"] = prep.ctx.system->description();
  }
  summary["inputs"] = prep.config;
  summary["resolved"] = prep.resolved;
  summary["tolerances"] = prep.tolerances;
  summary["measured"] = result.measured;
  summary["criteria"] = criteria;
  summary["warnings"] = result.warnings;
  summary["passed"] = passed;
  result.outputs.push_back("summary.json");
  result.outputs.push_back("summary.txt");
  summary["outputs"] = result.outputs;

  try {
    std::ofstream js(prep.ctx.out_dir / "summary.json", std::ios::binary);
    js << summary.dump(2) << '\n';
    std::ofstream txt(prep.ctx.out_dir / "summary.txt", std::ios::binary);
    txt << "sdelab " << kVersion << "  experiment: " << prep.ctx.kind << '\n';
    if (prep.ctx.system) txt << "system: " << prep.ctx.system->name() << " (" << prep.ctx.system->description() << ")\n";
    txt << "seed: " << prep.ctx.seed << "  threads: " << prep.ctx.threads << '\n';
    txt << "resolved inputs: " << prep.resolved.dump() << '\n';
    txt << "tolerances: " << prep.tolerances.dump() << '\n';
    for (const auto& item : result.measured.items()) txt << "  " << item.key() << " = " << item.value().dump() << '\n';
    for (const auto& w : result.warnings) txt << "warning: " << w << '\n';
    for (const auto& c : result.criteria) txt << describe_criterion(c) << '\n';
    txt << (passed ? "RESULT: PASS" : "RESULT: FAIL") << '\n';
    if (!js || !txt) throw Error("cannot write summary files");
  } catch (const std::exception& e) {
    outcome.exit_code = exit_runtime_error;
    outcome.message = e.what();
    log << outcome.message << '\n';
    return outcome;
  }

  for (const auto& c : result.criteria) log << describe_criterion(c) << '\n';
  for (const auto& w : result.warnings) log << "warning: " << w << '\n';
  outcome.outputs = result.outputs;
  outcome.exit_code = passed ? exit_ok : exit_criterion_failed;
  outcome.message = passed ? "ok" : "criterion failed";
  log << prep.ctx.kind << ": " << outcome.message << " -> " << prep.ctx.out_dir.string() << '\n';
  return outcome;
}

RunOutcome run_config_file(const fs::path& path, const RunOverrides& overrides, std::ostream& log) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    RunOutcome o;
    o.exit_code = exit_config_error;
    o.message = "config error: cannot read '" + path.string() + "'";
    log << o.message << '\n';
    return o;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_text(ss.str(), overrides, log);
}

SystemRegistry registry_from_config_text(const std::string& json_text) {
  SystemRegistry reg;
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("systems")) register_systems(reg, j.at("systems"));
  return reg;
}

std::vector<std::string> describe_systems(const SystemRegistry& registry) {
  std::vector<std::string> lines;
  for (const SystemSpec* s : registry.list()) {
    std::ostringstream os;
    os << s->name() << "  dim=" << s->dim() << " noise_dim=" << s->noise_dim() << "  " << s->description();
    lines.push_back(os.str());
  }
  return lines;
}

}  // namespace sdelab
