#include <doctest.h>

#include <cmath>
#include <numbers>

#include "emfg/variational.hpp"
#include "fixtures.hpp"

using namespace emfg;
using emfg::testing::coupled_two_type_spec;
using emfg::testing::scalar;
using emfg::testing::scalar_spec;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kE = std::numbers::e;

PopulationSpec decoupled_spec(double lambda = 0.5) {
  auto spec = scalar_spec(0.5);
  spec.subpops[0].lambda_explore = lambda;
  spec.subpops[0].phi_lagrange = 0.7;
  return spec;
}

double variance(const GridDensity& d) {
  const double mass = d.mass();
  const double mean = d.first_moment()(0) / mass;
  return d.integrate([&](const VectorXd& u) { return (u(0) - mean) * (u(0) - mean); }) / mass;
}

const TimeGrid kShort(0.0, 5.0, 500);

}  // namespace

TEST_CASE("Gaussian grid density") {
  const auto g = GridDensity::gaussian(VectorXd::Constant(1, 0.4), scalar(0.25), 401);
  CHECK(g.normalized());
  CHECK(std::abs(g.mass() - 1.0) < 1e-8);
  CHECK(g.first_moment()(0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(variance(g) == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(std::abs(-g.neg_entropy() - 0.5 * std::log(2 * kPi * kE * 0.25)) < 1e-4);

  const MatrixXd cov = (MatrixXd(2, 2) << 0.5, 0.1, 0.1, 0.3).finished();
  const auto g2 = GridDensity::gaussian(VectorXd::Zero(2), cov, 121);
  CHECK(std::abs(g2.mass() - 1.0) < 1e-8);
  CHECK(std::abs(-g2.neg_entropy() - 0.5 * std::log(std::pow(2 * kPi * kE, 2) * cov.determinant())) < 1e-4);

  CHECK_THROWS_WITH_AS(GridDensity::gaussian(VectorXd::Zero(3), MatrixXd::Identity(3, 3), 5),
                       "quadrature restricted to m <= 2", InputError);
  CHECK_THROWS_AS(GridDensity::gaussian(VectorXd::Zero(1), scalar(0.0)), InputError);
  CHECK_THROWS_AS(GridDensity(g.box(), -g.values(), false), InputError);
}

TEST_CASE("multiplicative perturbation") {
  const auto g = GridDensity::gaussian(VectorXd::Constant(1, -0.2), scalar(0.5), 301);
  const GridFunction c{g.box(), VectorXd::Constant(g.box().size(), 1.5)};
  CHECK(perturb_density(g, c, 0.0).values() == g.values());
  CHECK_FALSE(perturb_density(g, c, 0.0).normalized());

  const auto scaled = perturb_density(g, c, 0.1);
  CHECK(scaled.mass() == doctest::Approx(std::exp(0.15)).epsilon(1e-12));
  CHECK((scaled.values() - std::exp(0.15) * g.values()).lpNorm<Eigen::Infinity>() < 1e-12);

  // A negative quadratic sharpens the density: the conjugate Gaussian has
  // variance 1 / (1/v + 2 eps).
  GridFunction quad{g.box(), VectorXd(g.box().size())};
  for (Eigen::Index i = 0; i < quad.values.size(); ++i) {
    const double u = g.box().point(i)(0) + 0.2;
    quad.values(i) = -u * u;
  }
  const auto sharp = perturb_density(g, quad, 0.3);
  CHECK(variance(sharp) == doctest::Approx(1.0 / (1.0 / 0.5 + 0.6)).epsilon(1e-8));
  CHECK(variance(sharp) < variance(g));

  // Linear in eps as eps -> 0.
  GridFunction wobble{g.box(), VectorXd(g.box().size())};
  for (Eigen::Index i = 0; i < wobble.values.size(); ++i) wobble.values(i) = std::sin(3.0 * g.box().point(i)(0));
  const double d1 = (perturb_density(g, wobble, 1e-3).values() - g.values()).lpNorm<Eigen::Infinity>();
  const double d2 = (perturb_density(g, wobble, 1e-4).values() - g.values()).lpNorm<Eigen::Infinity>();
  CHECK(d1 / d2 == doctest::Approx(10.0).epsilon(1e-2));

  const GridFunction huge{g.box(), VectorXd::Constant(g.box().size(), 1e6)};
  CHECK_THROWS_AS(perturb_density(g, huge, 1.0), NumericalError);
}

TEST_CASE("optimal density cost matches the closed-form assembly") {
  auto spec = decoupled_spec(0.5);
  auto mf = solve_consistency(spec);
  const auto phi = optimal_density_path(mf, spec, 0, kShort);
  const auto cost = exploratory_cost_quadrature(phi, mf, spec, 0);

  // Decoupled scalar: the quadratic part closes to 1/2 Pi xi^2 with the
  // terminal value; exploration adds lambda/2 - lambda H per unit of
  // discounted time.
  const double Pi = mf.Pi[0].Pi(0, 0);
  const double H = policy_entropy(0, spec);
  const double lam = 0.5, rho = 0.5;
  const double expected = 0.5 * Pi + (lam / 2 - lam * H) * (1 - std::exp(-rho * 5.0)) / rho;
  CHECK(std::abs(cost.total - expected) <= 1e-3 * std::abs(expected));
  CHECK(std::abs(cost.lagrange) < 1e-8);

  // The mean path reproduces the closed-loop path it was built on.
  const auto x = mean_state_path(phi, mf, spec, 0);
  CHECK(x.values.back()(0) == doctest::Approx(std::exp(-Pi * 5.0)).epsilon(1e-4));

  // Doubling lambda in the cost, densities fixed: only the entropy part moves.
  auto doubled = spec;
  doubled.subpops[0].lambda_explore = 2 * lam;
  const auto cost2 = exploratory_cost_quadrature(phi, mf, doubled, 0);
  CHECK(cost2.total - cost.total == doctest::Approx(cost.entropy).epsilon(1e-12));
  CHECK(cost2.entropy == doctest::Approx(2 * cost.entropy).epsilon(1e-12));
}

TEST_CASE("first-order condition at the optimal density") {
  auto spec = decoupled_spec(0.5);
  auto mf = solve_consistency(spec);
  const auto phi = optimal_density_path(mf, spec, 0, kShort, 201);
  Rng rng(12345);
  for (int trial = 0; trial < 10; ++trial) {
    const auto omega = project_admissible(phi, random_direction(phi, rng));
    const double d = gateaux_derivative(phi, omega, mf, spec, 0, 1e-4);
    CHECK(std::abs(d) < 1e-3);
  }

  DirectionPath zero = mean_shift_direction(phi, VectorXd::Zero(1));
  CHECK(gateaux_derivative(phi, zero, mf, spec, 0, 1e-4) == 0.0);

  for (double delta : {0.5, -0.5}) {
    const auto shifted = shifted_density_path(mf, spec, 0, kShort, VectorXd::Constant(1, delta), 1.0, 201);
    const auto omega = mean_shift_direction(shifted, VectorXd::Constant(1, delta));
    CHECK(gateaux_derivative(shifted, omega, mf, spec, 0, 1e-4) < -1e-3);
  }
}

TEST_CASE("first-order condition holds with a frozen coupled mean field") {
  auto spec = coupled_two_type_spec();
  auto mf = solve_consistency(spec);
  for (Eigen::Index k = 0; k < 2; ++k) {
    const auto phi = optimal_density_path(mf, spec, k, kShort, 201);
    Rng rng(77 + static_cast<std::uint64_t>(k));
    for (int trial = 0; trial < 3; ++trial) {
      const auto omega = project_admissible(phi, random_direction(phi, rng));
      CHECK(std::abs(gateaux_derivative(phi, omega, mf, spec, k, 1e-4)) < 1e-3);
    }
  }
}

TEST_CASE("optimal density beats the perturbation family") {
  auto spec = decoupled_spec(0.5);
  auto mf = solve_consistency(spec);
  const double best = exploratory_cost_quadrature(optimal_density_path(mf, spec, 0, kShort, 201), mf, spec, 0).total;
  struct Member {
    double delta, factor;
  };
  for (const Member& m : {Member{0.5, 1}, Member{-0.5, 1}, Member{1, 1}, Member{-1, 1}, Member{0, 0.5},
                          Member{0, 2}, Member{0.5, 2}, Member{-0.5, 0.5}}) {
    const auto path = shifted_density_path(mf, spec, 0, kShort, VectorXd::Constant(1, m.delta), m.factor, 201);
    CHECK(exploratory_cost_quadrature(path, mf, spec, 0).total > best + 1e-4);
  }
}

TEST_CASE("unnormalized densities pay the Lagrange term") {
  auto spec = decoupled_spec(0.5);
  auto mf = solve_consistency(spec);
  const TimeGrid grid(0.0, 1.0, 50);
  auto phi = optimal_density_path(mf, spec, 0, grid, 101);
  DirectionPath lift;
  lift.grid = grid;
  for (const auto& d : phi.densities) lift.directions.push_back({d.box(), VectorXd::Ones(d.box().size())});
  const auto heavier = perturb_path(phi, lift, std::log(1.1));
  const auto cost = exploratory_cost_quadrature(heavier, mf, spec, 0);
  // phi (1.1 - 1) integrated against e^{-rho t} by the trapezoid rule.
  double w = 0.0;
  for (int i = 0; i <= 50; ++i) w += std::exp(-0.5 * grid.at(i)) * grid.dt() * ((i == 0 || i == 50) ? 0.5 : 1.0);
  CHECK(cost.lagrange == doctest::Approx(0.7 * 0.1 * w).epsilon(1e-9));
}
