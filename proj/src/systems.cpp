#include "sdelab/systems.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace sdelab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Box box_1d(double lo, double hi) { return Box{make_state({lo}), make_state({hi})}; }

Box box_2d(double lo, double hi) { return Box{make_state({lo, lo}), make_state({hi, hi})}; }

NoiseMatrix scalar(double v) {
  NoiseMatrix m(1, 1);
  m(0, 0) = v;
  return m;
}

StateVector zeros(Index n) { return StateVector::Zero(n); }

}  // namespace

namespace systems {

SystemSpec constant_noise(double sigma) {
  SystemDefinition def;
  def.name = "constant-noise-1d";
  std::ostringstream os;
  os << "a = 0, b = " << sigma << ", [0, 1] reflecting";
  def.description = os.str();
  def.drift = [](const StateVector&) { return zeros(1); };
  def.noise = [sigma](const StateVector&) { return scalar(sigma); };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(1, 1)); };
  def.noise_derivative = [](const StateVector&, Index) { return scalar(0.0); };
  def.domain = box_1d(0.0, 1.0);
  def.boundary = {Boundary::reflecting};
  return SystemSpec(std::move(def));
}

SystemSpec linear_noise_1d() {
  SystemDefinition def;
  def.name = "linear-noise-1d";
  def.description = "a = 0, b(x) = x, open line";
  def.drift = [](const StateVector&) { return zeros(1); };
  def.noise = [](const StateVector& x) { return scalar(x(0)); };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(1, 1)); };
  def.noise_derivative = [](const StateVector&, Index) { return scalar(1.0); };
  def.domain = box_1d(-kInf, kInf);
  def.boundary = {Boundary::open};
  return SystemSpec(std::move(def));
}

SystemSpec diagonal_2d() {
  SystemDefinition def;
  def.name = "diagonal-2d";
  def.description = "a = 0, B = diag(x1, x2), open plane";
  def.dim = 2;
  def.noise_dim = 2;
  def.drift = [](const StateVector&) { return zeros(2); };
  def.noise = [](const StateVector& x) {
    NoiseMatrix b = NoiseMatrix::Zero(2, 2);
    b(0, 0) = x(0);
    b(1, 1) = x(1);
    return b;
  };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(2, 2)); };
  def.noise_derivative = [](const StateVector&, Index axis) {
    NoiseMatrix db = NoiseMatrix::Zero(2, 2);
    db(axis, axis) = 1.0;
    return db;
  };
  def.domain = box_2d(-kInf, kInf);
  def.boundary = {Boundary::open, Boundary::open};
  return SystemSpec(std::move(def));
}

SystemSpec shear_2d() {
  SystemDefinition def;
  def.name = "shear-2d";
  def.description = "a = 0, B = [[1, x1], [0, 1]], open plane (non-symmetric noise)";
  def.dim = 2;
  def.noise_dim = 2;
  def.drift = [](const StateVector&) { return zeros(2); };
  def.noise = [](const StateVector& x) {
    NoiseMatrix b = NoiseMatrix::Identity(2, 2);
    b(0, 1) = x(0);
    return b;
  };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(2, 2)); };
  def.noise_derivative = [](const StateVector&, Index axis) {
    NoiseMatrix db = NoiseMatrix::Zero(2, 2);
    if (axis == 0) db(0, 1) = 1.0;
    return db;
  };
  def.domain = box_2d(-kInf, kInf);
  def.boundary = {Boundary::open, Boundary::open};
  return SystemSpec(std::move(def));
}

SystemSpec temperature_profile_1d() {
  using std::numbers::pi;
  SystemDefinition def;
  def.name = "temperature-profile-1d";
  def.description = "a = 0, D(x) = 1 + 0.9 sin(pi x), b = sqrt(D), [0, 1] reflecting";
  def.drift = [](const StateVector&) { return zeros(1); };
  def.noise = [](const StateVector& x) { return scalar(std::sqrt(1.0 + 0.9 * std::sin(pi * x(0)))); };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(1, 1)); };
  def.noise_derivative = [](const StateVector& x, Index) {
    const double b = std::sqrt(1.0 + 0.9 * std::sin(pi * x(0)));
    return scalar(0.45 * pi * std::cos(pi * x(0)) / b);
  };
  def.domain = box_1d(0.0, 1.0);
  def.boundary = {Boundary::reflecting};
  return SystemSpec(std::move(def));
}

SystemSpec ou_1d() {
  SystemDefinition def;
  def.name = "ou-1d";
  def.description = "a = -x, D = 1, [-5, 5] reflecting";
  def.drift = [](const StateVector& x) { return StateVector(-x); };
  def.noise = [](const StateVector&) { return scalar(1.0); };
  def.drift_jacobian = [](const StateVector&) { return scalar(-1.0); };
  def.noise_derivative = [](const StateVector&, Index) { return scalar(0.0); };
  def.domain = box_1d(-5.0, 5.0);
  def.boundary = {Boundary::reflecting};
  return SystemSpec(std::move(def));
}

SystemSpec heat_1d() {
  SystemDefinition def;
  def.name = "heat-1d";
  def.description = "a = 0, D = 2, [-5, 5] reflecting";
  def.drift = [](const StateVector&) { return zeros(1); };
  def.noise = [](const StateVector&) { return scalar(std::sqrt(2.0)); };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(1, 1)); };
  def.noise_derivative = [](const StateVector&, Index) { return scalar(0.0); };
  def.domain = box_1d(-5.0, 5.0);
  def.boundary = {Boundary::reflecting};
  return SystemSpec(std::move(def));
}

SystemSpec sine_noise_1d() {
  SystemDefinition def;
  def.name = "sine-noise-1d";
  def.description = "a = 0, b(x) = 1 + 0.5 sin(x), open line";
  def.drift = [](const StateVector&) { return zeros(1); };
  def.noise = [](const StateVector& x) { return scalar(1.0 + 0.5 * std::sin(x(0))); };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Zero(1, 1)); };
  def.noise_derivative = [](const StateVector& x, Index) { return scalar(0.5 * std::cos(x(0))); };
  def.domain = box_1d(-kInf, kInf);
  def.boundary = {Boundary::open};
  return SystemSpec(std::move(def));
}

SystemSpec ou_2d() {
  SystemDefinition def;
  def.name = "ou-2d";
  def.description = "a = -x, B = I, [-4, 4]^2 reflecting";
  def.dim = 2;
  def.noise_dim = 2;
  def.drift = [](const StateVector& x) { return StateVector(-x); };
  def.noise = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Identity(2, 2)); };
  def.drift_jacobian = [](const StateVector&) { return NoiseMatrix(-NoiseMatrix::Identity(2, 2)); };
  def.noise_derivative = [](const StateVector&, Index) { return NoiseMatrix(NoiseMatrix::Zero(2, 2)); };
  def.domain = box_2d(-4.0, 4.0);
  def.boundary = {Boundary::reflecting, Boundary::reflecting};
  return SystemSpec(std::move(def));
}

}  // namespace systems

SystemRegistry::SystemRegistry() {
  for (auto s : {systems::constant_noise(), systems::linear_noise_1d(), systems::diagonal_2d(), systems::shear_2d(),
                 systems::temperature_profile_1d(), systems::ou_1d(), systems::heat_1d(), systems::sine_noise_1d(),
                 systems::ou_2d()}) {
    entries_.emplace(s.name(), s);
  }
}

void SystemRegistry::add(const SystemSpec& system) {
  if (system.name().empty()) throw ConfigError("registered systems need a name");
  if (entries_.contains(system.name())) {
    throw ConfigError("system name '" + system.name() + "' is already registered");
  }
  entries_.emplace(system.name(), system);
}

bool SystemRegistry::contains(const std::string& name) const { return entries_.contains(name); }

const SystemSpec& SystemRegistry::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown system '" + name + "'");
  return it->second;
}

std::vector<const SystemSpec*> SystemRegistry::list() const {
  std::vector<const SystemSpec*> out;
  for (const auto& [name, spec] : entries_) out.push_back(&spec);
  return out;
}

}  // namespace sdelab
