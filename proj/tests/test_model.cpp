#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "sdelab/model.hpp"
#include "sdelab/systems.hpp"

using namespace sdelab;

namespace {

SystemSpec fixed_noise(Eigen::MatrixXd b) {
  SystemDefinition def;
  def.name = "fixed";
  def.dim = b.rows();
  def.noise_dim = b.cols();
  def.drift = [n = b.rows()](const StateVector&) { return StateVector(StateVector::Zero(n)); };
  def.noise = [b](const StateVector&) { return NoiseMatrix(b); };
  def.domain = Box{StateVector::Constant(b.rows(), -1.0), StateVector::Constant(b.rows(), 1.0)};
  def.boundary.assign(static_cast<std::size_t>(b.rows()), Boundary::reflecting);
  return SystemSpec(std::move(def));
}

std::vector<StateVector> probe_grid(Index dim, double lo, double hi, int per_axis) {
  std::vector<StateVector> out;
  const int total = dim == 1 ? per_axis : per_axis * per_axis;
  for (int k = 0; k < total; ++k) {
    StateVector x(dim);
    int rem = k;
    for (Index d = 0; d < dim; ++d) {
      x(d) = lo + (hi - lo) * (rem % per_axis + 0.5) / per_axis;
      rem /= per_axis;
    }
    out.push_back(x);
  }
  return out;
}

}  // namespace

TEST_CASE("noise-induced drift examples") {
  const auto cst = systems::constant_noise(0.7);
  CHECK(evaluate(cst, make_state({0.3}), 1.0).a_nid(0) == 0.0);

  const auto lin = systems::linear_noise_1d();
  const auto e = evaluate(lin, make_state({2.0}), 1.0);
  CHECK(e.a_nid(0) == doctest::Approx(2.0).epsilon(1e-14));
  // finite differences agree
  CHECK(evaluate(lin.with_finite_differences(), make_state({2.0}), 1.0).a_nid(0) ==
        doctest::Approx(2.0).epsilon(1e-8));

  const auto diag = systems::diagonal_2d();
  const auto d = evaluate(diag, make_state({3.0, 5.0}), 0.5);
  CHECK(d.a_nid(0) == doctest::Approx(3.0));
  CHECK(d.a_nid(1) == doctest::Approx(5.0));
}

TEST_CASE("diffusion examples") {
  CHECK(diffusion(fixed_noise(Eigen::MatrixXd::Identity(2, 2)), make_state({0.0, 0.0})).isIdentity());

  Eigen::MatrixXd b(2, 2);
  b << 1, 2, 0, 1;
  const NoiseMatrix dd = diffusion(fixed_noise(b), make_state({0.0, 0.0}));
  Eigen::Matrix2d expect;
  expect << 5, 2, 2, 1;
  CHECK((dd - expect).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd wide(1, 2);
  wide << 1, 1;
  const NoiseMatrix d1 = diffusion(fixed_noise(wide), make_state({0.0}));
  CHECK(d1.rows() == 1);
  CHECK(d1(0, 0) == 2.0);
}

TEST_CASE("diffusion is symmetric PSD on every built-in") {
  SystemRegistry reg;
  for (const SystemSpec* s : reg.list()) {
    for (const auto& x : probe_grid(s->dim(), 0.1, 0.9, 7)) {
      const Eigen::MatrixXd d = diffusion(*s, x);
      CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d);
      CHECK(es.eigenvalues().minCoeff() >= -1e-12);
    }
  }
}

TEST_CASE("a_tot differences are exact multiples of a_nid") {
  const auto s = systems::sine_noise_1d();
  for (double x : {-1.0, 0.3, 2.0}) {
    const auto e1 = evaluate(s, make_state({x}), 1.0);
    const auto e0 = evaluate(s, make_state({x}), 0.0);
    const auto eh = evaluate(s, make_state({x}), 0.5);
    CHECK(e1.a_tot(0) - e0.a_tot(0) == e1.a_nid(0));
    CHECK(e1.a_tot(0) == e1.a(0));
    CHECK(eh.a_tot(0) == e1.a(0) - 0.5 * e1.a_nid(0));
  }
}

TEST_CASE("identity residual: symmetric systems vanish, shear does not") {
  for (const auto& sys : {systems::linear_noise_1d(), systems::diagonal_2d()}) {
    for (const auto& x : probe_grid(sys.dim(), -3.0, 3.0, 10)) {
      CHECK(nid_identity_residual(sys, x).cwiseAbs().maxCoeff() < 1e-6);
      CHECK(nid_identity_residual(sys.with_finite_differences(), x).cwiseAbs().maxCoeff() <
            1e-4 * (1.0 + x.norm()));
    }
  }
  const auto shear = systems::shear_2d();
  const StateVector r = nid_identity_residual(shear, make_state({0.7, -0.2}));
  CHECK(std::abs(r(0)) < 1e-6);
  CHECK(r(1) == doctest::Approx(-0.5).epsilon(1e-6));
  const auto e = evaluate(shear, make_state({0.7, -0.2}), 1.0);
  CHECK(e.a_nid(0) == doctest::Approx(0.7));
  CHECK(e.a_nid(1) == 0.0);
  CHECK(nid_identity_residual(fixed_noise(Eigen::MatrixXd::Identity(2, 2)), make_state({0.0, 0.0})).norm() < 1e-12);
}

TEST_CASE("identity residual stencil must stay in the domain") {
  const auto s = systems::constant_noise(1.0);
  CHECK_THROWS_AS(nid_identity_residual(s, make_state({0.0})), DomainError);
}

TEST_CASE("analytic and finite-difference derivatives agree") {
  SystemRegistry reg;
  for (const SystemSpec* s : reg.list()) {
    const SystemSpec fd = s->with_finite_differences();
    for (const auto& x : probe_grid(s->dim(), 0.15, 0.85, 5)) {
      for (Index m = 0; m < s->dim(); ++m) {
        const Eigen::MatrixXd a = noise_derivative(*s, x, m);
        const Eigen::MatrixXd f = noise_derivative(fd, x, m);
        const double h = fd_step(x(m));
        CHECK((a - f).cwiseAbs().maxCoeff() <= 10.0 * h * h * (1.0 + a.cwiseAbs().maxCoeff()));
      }
      const Eigen::MatrixXd ja = drift_jacobian(*s, x);
      const Eigen::MatrixXd jf = drift_jacobian(fd, x);
      CHECK((ja - jf).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
}

TEST_CASE("evaluation errors") {
  const auto s = systems::temperature_profile_1d();
  CHECK_THROWS_AS(evaluate(s, make_state({1.5}), 1.0), DomainError);
  SystemDefinition def;
  def.name = "bad";
  def.drift = [](const StateVector&) { return make_state({std::log(-1.0)}); };
  def.noise = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Ones(1, 1)); };
  def.domain = Box{make_state({-1.0}), make_state({1.0})};
  def.boundary = {Boundary::reflecting};
  CHECK_THROWS_AS(evaluate(SystemSpec(def), make_state({0.0}), 0.0), EvaluationError);
}

TEST_CASE("system construction is validated") {
  SystemDefinition def;
  def.name = "bounded-on-unbounded";
  def.drift = [](const StateVector&) { return make_state({0.0}); };
  def.noise = [](const StateVector&) { return NoiseMatrix(NoiseMatrix::Ones(1, 1)); };
  def.domain = Box{make_state({0.0}), make_state({INFINITY})};
  def.boundary = {Boundary::reflecting};
  CHECK_THROWS_AS(SystemSpec{def}, ConfigError);
  def.domain = Box{make_state({1.0}), make_state({0.0})};
  def.boundary = {Boundary::open};
  CHECK_THROWS_AS(SystemSpec{def}, ConfigError);
  def.domain = Box{make_state({0.0}), make_state({1.0})};
  def.boundary = {};
  CHECK_THROWS_AS(SystemSpec{def}, ConfigError);
}

TEST_CASE("symmetrize examples") {
  Eigen::Matrix2d psd;
  psd << 2, 1, 1, 3;
  auto r = symmetrize(psd);
  CHECK((r.o - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.b_star - psd).cwiseAbs().maxCoeff() < 1e-12);

  const double th = std::numbers::pi / 2;
  Eigen::Matrix2d rot;
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  r = symmetrize(rot);
  CHECK((r.b_star - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.o - rot.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::Matrix2d shear;
  shear << 1, 1, 0, 1;
  r = symmetrize(shear);
  Eigen::Matrix2d d;
  d << 2, 1, 1, 1;
  CHECK((r.b_star - r.b_star.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((r.b_star * r.b_star.transpose() - d).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((shear * r.o - r.b_star).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("symmetrize: random matrices, padding, idempotence, rejection") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = trial % 2 ? 3 : 2;
    Eigen::MatrixXd b(n, n);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = n01(gen);
    const auto r = symmetrize(b);
    CHECK((r.b_star - r.b_star.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((r.o * r.o.transpose() - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((r.b_star * r.b_star.transpose() - b * b.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((symmetrize(r.b_star).b_star - r.b_star).cwiseAbs().maxCoeff() < 1e-10);
  }
  Eigen::MatrixXd tall(2, 1);
  tall << 1, 2;
  const auto p = symmetrize(tall);
  CHECK(p.padded);
  CHECK(p.b_star.rows() == 2);
  CHECK((p.b_star * p.b_star.transpose() - tall * tall.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(symmetrize(Eigen::MatrixXd::Ones(1, 2)), ConfigError);
  Eigen::Matrix2d bad = Eigen::Matrix2d::Identity();
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(symmetrize(bad), EvaluationError);
}

TEST_CASE("symmetrize works for float") {
  Eigen::Matrix2f b;
  b << 1, 2, 0, 1;
  const auto r = symmetrize(b);
  CHECK((r.b_star * r.b_star.transpose() - b * b.transpose()).cwiseAbs().maxCoeff() < 1e-5f);
}

namespace {

SystemSpec rotated_field(std::function<Eigen::Matrix2d(const StateVector&)> s, const Eigen::Matrix2d& rot) {
  SystemDefinition def;
  def.name = "rotated";
  def.dim = 2;
  def.noise_dim = 2;
  def.drift = [](const StateVector&) { return StateVector(StateVector::Zero(2)); };
  def.noise = [s, rot](const StateVector& x) { return NoiseMatrix(s(x) * rot); };
  def.domain = Box{make_state({0.5, 0.5}), make_state({3.0, 3.0})};
  def.boundary = {Boundary::reflecting, Boundary::reflecting};
  return SystemSpec(def);
}

Eigen::Matrix2d rotation(double th) {
  Eigen::Matrix2d r;
  r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  return r;
}

}  // namespace

TEST_CASE("rotating by a constant orientation symmetrizes the field") {
  // B(x) = diag(x1, x2) R: O(x) = R^T everywhere, B O = diag(x1, x2)
  const Eigen::Matrix2d rot = rotation(0.4);
  const SystemSpec sys = rotated_field([](const StateVector& x) { return Eigen::Vector2d(x(0), x(1)).asDiagonal().toDenseMatrix(); }, rot);
  const auto probes = probe_grid(2, 1.0, 2.5, 4);
  const auto orient = symmetrization_orientation(sys, probes);
  CHECK(orient.constant);
  CHECK((orient.reference - rot.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  const SystemSpec rotated = rotate_noise(sys, orient.reference);
  for (const auto& x : probes) {
    const Eigen::MatrixXd b = rotated.noise(x);
    CHECK((b - b.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(nid_identity_residual(rotated, x).cwiseAbs().maxCoeff() < 1e-4 * (1.0 + x.norm()));
    CHECK((diffusion(rotated, x) - diffusion(sys, x)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK((sys.noise(probes[0]) - sys.noise(probes[0]).transpose()).cwiseAbs().maxCoeff() > 0.1);

  const auto shear = symmetrization_orientation(systems::shear_2d(), probes);
  CHECK_FALSE(shear.constant);
}

TEST_CASE("pointwise symmetry alone does not close the identity") {
  // S symmetric with off-diagonal x2 coupling: a_nid - div D / 2 is
  // (1/2) sum_jk (S_jk d_k S_ij - S_ij d_k S_jk), nonzero here.
  auto s = [](const StateVector& x) {
    Eigen::Matrix2d m;
    m << 2.0 + x(0) * x(0), 0.3 * x(1), 0.3 * x(1), 2.0 + 0.5 * x(0);
    return m;
  };
  const SystemSpec sym = rotated_field(s, Eigen::Matrix2d::Identity());
  const SystemSpec rot = rotated_field(s, rotation(0.4));
  const StateVector x = make_state({1.0, 2.0});
  const StateVector r = nid_identity_residual(sym, x);
  // second component by hand at x = (1, 2):
  //   first  = sum_jk S_jk d_k S_1j = S_00 d_0 S_10 + S_01 d_1 S_10 + S_10 d_0 S_11 + S_11 d_1 S_11
  //          = 0 + 0.6 * 0.3 + 0.6 * 0.5 + 0 = 0.48
  //   second = sum_jk S_1j d_k S_jk = S_10 (d_0 S_00 + d_1 S_01) + S_11 (d_0 S_10 + d_1 S_11)
  //          = 0.6 * (2 + 0.3) + 2.5 * 0 = 1.38
  CHECK(r(1) == doctest::Approx(0.5 * (0.48 - 1.38)).epsilon(1e-6));
  // a constant right rotation leaves a_nid and D, hence the residual, unchanged
  CHECK((nid_identity_residual(rot, x) - r).cwiseAbs().maxCoeff() < 1e-6);
}
