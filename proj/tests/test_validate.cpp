#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "sdelab/systems.hpp"
#include "sdelab/validate.hpp"

using namespace sdelab;

namespace {

Eigen::MatrixXd column(const std::vector<double>& v) {
  Eigen::MatrixXd m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return m;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

DensityGrid triangular(const GridGeometry& g) {
  // 2x on [0, 1], cell averages
  DensityGrid d{g, Eigen::VectorXd(g.size()), 0.0, {}};
  for (Index i = 0; i < g.size(); ++i) d.w(i) = 2.0 * g.center(i)(0);
  return d;
}

}  // namespace

TEST_CASE("every sample in one bin") {
  const GridGeometry g({Axis{0, 1, 10}});
  const auto h = histogram(column(std::vector<double>(500, 0.35)), g);
  CHECK(h.counts(3) == 500);
  CHECK(h.counts.sum() == 500);
  CHECK(h.density(3) == doctest::Approx(10.0));
  CHECK(h.mass() == doctest::Approx(1.0));
  CHECK(h.std_error(3) == 0.0);
}

TEST_CASE("outside points are counted, not binned") {
  const GridGeometry g({Axis{0, 1, 4}});
  const auto h = histogram(column({-0.5, 0.1, 0.6, 1.5, 0.9}), g);
  CHECK(h.n_outside == 2);
  CHECK(h.n_counted == 3);
  CHECK(h.counted_fraction() == doctest::Approx(0.6));
  CHECK(h.as_density(false).total_mass() == doctest::Approx(0.6));
  CHECK(h.as_density().total_mass() == doctest::Approx(1.0));
}

TEST_CASE("normal samples: bins agree with the CDF within 4 standard errors") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> n01;
  std::vector<double> xs(200000);
  for (auto& x : xs) x = n01(gen);
  const GridGeometry g({Axis{-6, 6, 48}});
  const auto h = histogram(column(xs), g);
  const double vol = g.cell_volume();
  for (Index i = 0; i < 48; ++i) {
    const double p = normal_cdf(g.axis(0).face(i + 1)) - normal_cdf(g.axis(0).face(i));
    const double se = std::sqrt(p * (1 - p) / 200000.0) / vol;
    CHECK(std::abs(h.density(i) - p / vol) <= 4.0 * se + 1e-15);
  }
}

TEST_CASE("uniform samples give a flat histogram") {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> xs(100000);
  for (auto& x : xs) x = u(gen);
  const auto h = histogram(column(xs), GridGeometry({Axis{0, 1, 20}}));
  for (Index i = 0; i < 20; ++i) CHECK(std::abs(h.density(i) - 1.0) <= 4.0 * std::sqrt(0.05 * 0.95 / 1e5) / 0.05);
  std::vector<double> sub(xs.begin(), xs.begin() + 20000);
  CHECK(ks_statistic(sub, uniform_density(GridGeometry({Axis{0, 1, 20}}))) < 1.36 / std::sqrt(20000.0));
}

TEST_CASE("L1 distance") {
  const GridGeometry g({Axis{0, 1, 100}});
  const auto u = uniform_density(g);
  CHECK(l1_distance(u, u) == 0.0);
  DensityGrid left{g, Eigen::VectorXd::Zero(100), 0.0, {}}, right = left;
  left.w.head(50).setConstant(2.0);
  right.w.tail(50).setConstant(2.0);
  CHECK(l1_distance(left, right) == doctest::Approx(2.0));
  // integral |1 - 2x| over [0, 1] = 1/2
  CHECK(l1_distance(u, triangular(g)) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK_THROWS_AS(l1_distance(u, uniform_density(GridGeometry({Axis{0, 1, 50}}))), ConfigError);
}

TEST_CASE("KS statistic") {
  const GridGeometry g({Axis{0, 1, 50}});
  CHECK(ks_statistic({0.5}, uniform_density(g)) == doctest::Approx(0.5));
  // triangular samples by inversion against uniform: sup |x^2 - x| = 1/4
  std::vector<double> s;
  for (int k = 0; k < 4000; ++k) s.push_back(std::sqrt((k + 0.5) / 4000.0));
  CHECK(ks_statistic(s, triangular(g)) < 1e-3);
  CHECK(ks_statistic(s, uniform_density(g)) == doctest::Approx(0.25).epsilon(1e-2));
  CHECK_THROWS_AS(ks_statistic({}, uniform_density(g)), ConfigError);
}

TEST_CASE("bin z-scores use the binomial error") {
  const GridGeometry g({Axis{0, 1, 4}});
  const auto u = uniform_density(g);
  Eigen::VectorXd counts(4);
  counts << 250, 250, 300, 200;
  const auto z = bin_z_scores(counts, 1000, u);
  const double se = std::sqrt(0.25 * 0.75 / 1000.0);
  CHECK(z(0) == doctest::Approx(0.0));
  CHECK(z(2) == doctest::Approx(0.05 / se));
  CHECK(z(3) == doctest::Approx(-0.05 / se));

  DensityGrid half{g, Eigen::VectorXd::Zero(4), 0.0, {}};
  half.w.head(2).setConstant(2.0);
  const auto zz = bin_z_scores(counts, 1000, half);
  CHECK(std::isinf(zz(2)));
  CHECK(zz(2) > 0);
}

TEST_CASE("cross validation: heat equation from a point") {
  MonteCarloParams mc;
  mc.n_paths = 20000;
  mc.dt = 1e-3;
  mc.threads = 2;
  const auto r = cross_validate(systems::heat_1d(), 1.0, make_state({0.0}), 0.25, mc, GridSpec{{40}, {}, {}});
  CHECK(r.l1 < 0.05);
  CHECK(r.max_abs_z < 5.0);
  CHECK(r.ks < 0.02);
  CHECK(r.absorbed_fraction == 0.0);
  CHECK(r.fpe_mass == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r.z.size() == 40);
}

TEST_CASE("cross validation detects a wrong alpha") {
  MonteCarloParams mc;
  mc.n_paths = 20000;
  mc.threads = 2;
  const auto sys = systems::temperature_profile_1d();
  auto r = cross_validate(sys, 1.0, make_state({0.5}), 0.5, mc, GridSpec{{25}, {}, {}});
  CHECK(r.l1 < 0.05);
  CHECK(r.max_abs_z < 5.0);
  // same ensemble, FPE at alpha = 0: the densities disagree
  const auto wrong = evolve_for(FokkerPlanckOperator(sys, 0.0, r.fpe.geometry),
                                point_density(r.fpe.geometry, make_state({0.5})), 0.5);
  CHECK(l1_distance(r.histogram.as_density(false), wrong) > 0.1);
}
