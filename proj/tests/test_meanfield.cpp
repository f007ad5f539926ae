#include <doctest.h>

#include <cmath>
#include <cstring>

#include "emfg/meanfield.hpp"
#include "fixtures.hpp"

using namespace emfg;
using emfg::testing::coupled_two_type_spec;
using emfg::testing::scalar;
using emfg::testing::scalar_spec;

namespace {

double scalar_root(double A, double B, double Q, double R, double S, double rho) {
  const double a = B * B / R;
  const double b = 2 * A - rho - 2 * B * S / R;
  const double c = Q - S * S / R;
  return (b + std::sqrt(b * b + 4 * a * c)) / (2 * a);
}

PopulationSpec single_coupled_spec() {
  PopulationSpec spec = scalar_spec(0.4);
  auto& p = spec.subpops[0];
  p.A = scalar(0.2);
  p.B = scalar(1.5);
  p.F = scalar(0.3);
  p.H = scalar(0.2);
  p.Q = scalar(1.2);
  p.R = scalar(0.8);
  p.S = scalar(0.15);
  p.psi = scalar(0.5);
  p.eta = VectorXd::Constant(1, 0.3);
  p.nvec = VectorXd::Constant(1, -0.1);
  p.b = TimeTable(VectorXd::Constant(1, 0.25));
  spec.x0_mean = VectorXd::Constant(1, 2.0);
  return spec;
}

}  // namespace

TEST_CASE("feedback gain and aggregate drift, scalar") {
  auto spec = scalar_spec();
  const std::vector<MatrixXd> Pis{scalar(1.0)};
  const MatrixXd J = feedback_gain_matrix(spec, Pis);
  CHECK(J(0, 0) == doctest::Approx(-1.0));
  const MatrixXd Abar = aggregate_drift_matrix(spec, Pis, J);
  CHECK(Abar(0, 0) == doctest::Approx(-1.0));

  const VectorXd L = feedforward(spec, {VectorXd::Zero(1)});
  CHECK(L(0) == 0.0);
  CHECK(aggregate_offset(spec, {VectorXd::Zero(1)}, L, 3.0)(0) == 0.0);
}

TEST_CASE("symmetric types give mirrored gain rows") {
  auto spec = scalar_spec();
  spec.subpops[0].S = scalar(0.2);
  spec.subpops[0].psi = scalar(0.4);
  spec.subpops.push_back(spec.subpops[0]);
  spec.pi = VectorXd::Constant(2, 0.5);
  const std::vector<MatrixXd> Pis{scalar(0.9), scalar(0.9)};
  const MatrixXd J = feedback_gain_matrix(spec, Pis);
  REQUIRE(J.rows() == 2);
  REQUIRE(J.cols() == 2);
  CHECK(J(0, 0) == doctest::Approx(J(1, 1)));
  CHECK(J(0, 1) == doctest::Approx(J(1, 0)));
  // Own block: -(Pi + S) + S psi pi_1; other block: S psi pi_2.
  CHECK(J(0, 0) == doctest::Approx(-(0.9 + 0.2) + 0.2 * 0.4 * 0.5));
  CHECK(J(0, 1) == doctest::Approx(0.2 * 0.4 * 0.5));
}

TEST_CASE("H = 0 makes mbar independent of L") {
  auto spec = coupled_two_type_spec();
  for (auto& p : spec.subpops) p.H.setZero();
  const std::vector<VectorXd> s{VectorXd::Constant(1, 0.3), VectorXd::Constant(1, -0.2)};
  const VectorXd a = aggregate_offset(spec, s, VectorXd::Zero(2), 0.0);
  const VectorXd b = aggregate_offset(spec, s, VectorXd::Constant(2, 7.0), 0.0);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("steady state") {
  auto spec = scalar_spec();
  std::vector<RiccatiSolution> Pis{solve_discounted_are(spec.subpops[0], spec.rho)};
  auto zero = steady_state(spec, Pis);
  CHECK(zero.s[0].norm() == 0.0);
  CHECK(zero.xbar.norm() == 0.0);

  spec.subpops[0].eta = VectorXd::Ones(1);
  auto with_eta = steady_state(spec, Pis);
  const double Pi = Pis[0].Pi(0, 0);
  CHECK(with_eta.s[0](0) == doctest::Approx(1.0 / (spec.rho + Pi)).epsilon(1e-12));

  // Superposition in b.
  auto coupled = coupled_two_type_spec();
  std::vector<RiccatiSolution> cp;
  for (const auto& p : coupled.subpops) cp.push_back(solve_discounted_are(p, coupled.rho));
  auto base = steady_state(coupled, cp);
  auto shifted_spec = coupled;
  shifted_spec.subpops[0].b = TimeTable(VectorXd::Constant(1, 0.2 + 0.1));
  auto once = steady_state(shifted_spec, cp);
  shifted_spec.subpops[0].b = TimeTable(VectorXd::Constant(1, 0.2 + 0.2));
  auto twice = steady_state(shifted_spec, cp);
  CHECK((twice.xbar - base.xbar - 2.0 * (once.xbar - base.xbar)).norm() < 1e-12);
}

TEST_CASE("decoupled case: exponential mean, one iteration") {
  auto spec = scalar_spec(0.5);
  SolverConfig cfg;
  cfg.steps = 8000;
  auto sol = solve_consistency(spec, cfg);
  CHECK(sol.iterations == 1);
  const double Pi = (-0.5 + std::sqrt(4.25)) / 2;
  CHECK(sol.Pi[0].Pi(0, 0) == doctest::Approx(Pi).epsilon(1e-10));
  for (int i = 0; i < sol.grid().size(); i += 97) {
    const double t = sol.grid().at(i);
    CHECK(std::abs(sol.xbar.node(i)(0) - std::exp(-Pi * t)) < 1e-9);
    CHECK(sol.s[0].node(i).norm() == 0.0);
  }
  CHECK(sol.residual < 1e-12);
  CHECK(consistency_residual(sol, spec) < 1e-9);
}

TEST_CASE("decoupled case with sources converges in one iteration") {
  auto spec = scalar_spec(0.5);
  spec.subpops[0].eta = VectorXd::Constant(1, 0.4);
  spec.subpops[0].b = TimeTable(VectorXd::Constant(1, -0.3));
  spec.subpops[0].nvec = VectorXd::Constant(1, 0.1);
  auto sol = solve_consistency(spec);
  CHECK(sol.iterations == 1);
  CHECK(consistency_residual(sol, spec) < 1e-6);
}

TEST_CASE("coupled single type matches the stable-manifold solution") {
  // Independent oracle: (x, s) solve a linear 2x2 system z' = M z + c. The
  // bounded solution sits on the stable eigenvector through x(0) = xi.
  auto spec = single_coupled_spec();
  const auto& p = spec.subpops[0];
  const double A = p.A(0, 0), B = p.B(0, 0), F = p.F(0, 0), H = p.H(0, 0), Q = p.Q(0, 0), R = p.R(0, 0),
               S = p.S(0, 0), psi = p.psi(0, 0), eta = p.eta(0), nn = p.nvec(0), b = 0.25, rho = spec.rho;
  const double Pi = scalar_root(A, B, Q, R, S, rho);
  const double J = -(B * Pi + S) / R + S * psi / R;
  // mu = J x - (B/R) s - n/R
  const double mu_x = J, mu_s = -B / R, mu_c = -nn / R;
  Eigen::Matrix2d M;
  Eigen::Vector2d c;
  M(0, 0) = A + F + (B + H) * mu_x;
  M(0, 1) = (B + H) * mu_s;
  c(0) = (B + H) * mu_c + b;
  const double drift = A - S * B / R - Pi * B * B / R;
  M(1, 0) = -Pi * (F + B * S * psi / R + H * mu_x) - (S * S / R - Q) * psi;
  M(1, 1) = rho - drift - Pi * H * mu_s;
  c(1) = -Pi * (H * mu_c - B * nn / R + b) + S * nn / R - eta;
  const Eigen::Vector2d z_inf = -M.lu().solve(c);

  Eigen::EigenSolver<Eigen::Matrix2d> es(M);
  int stable = es.eigenvalues()(0).real() < es.eigenvalues()(1).real() ? 0 : 1;
  const double mu_rate = es.eigenvalues()(stable).real();
  const Eigen::Vector2d v = es.eigenvectors().col(stable).real();
  REQUIRE(mu_rate < 0.0);

  SolverConfig cfg;
  cfg.tol = 1e-12;
  auto sol = solve_consistency(spec, cfg);
  CHECK(sol.iterations > 1);
  const double amp = (spec.x0_mean(0) - z_inf(0)) / v(0);
  for (int i = 0; i < sol.grid().size(); i += 113) {
    const double t = sol.grid().at(i);
    const Eigen::Vector2d z = z_inf + amp * v * std::exp(mu_rate * t);
    CHECK(std::abs(sol.xbar.node(i)(0) - z(0)) < 1e-6);
    CHECK(std::abs(sol.s[0].node(i)(0) - z(1)) < 1e-6);
  }
  auto ss = steady_state(spec, sol.Pi);
  CHECK(std::abs(ss.xbar(0) - z_inf(0)) < 1e-10);
  CHECK(std::abs(ss.s[0](0) - z_inf(1)) < 1e-10);
  CHECK(std::abs(sol.xbar.values.back()(0) - ss.xbar(0)) < 1e-6);
}

TEST_CASE("coupled two-type reference spec") {
  auto spec = coupled_two_type_spec();
  auto sol = solve_consistency(spec);
  CHECK(sol.residual < 1e-6);
  CHECK(consistency_residual(sol, spec) < 1e-5);
  for (int i = 0; i < sol.grid().size(); ++i)
    CHECK((sol.mubar.node(i) - (sol.J * sol.xbar.node(i) + sol.L.node(i))).lpNorm<Eigen::Infinity>() <= 1e-9);

  auto corrupted = sol;
  for (auto& v : corrupted.xbar.values) v.array() += 0.1;
  CHECK(consistency_residual(corrupted, spec) > 0.01);

  auto ss = steady_state(spec, sol.Pi);
  CHECK((sol.xbar.values.back() - ss.xbar).norm() < 1e-6);
}

TEST_CASE("classical and exploratory labels give bitwise-identical solutions") {
  auto spec = coupled_two_type_spec();
  SolverConfig cfg;
  cfg.horizon = 20;
  auto a = solve_consistency(spec, cfg, Formulation::kClassical);
  auto b = solve_consistency(spec, cfg, Formulation::kExploratory);
  CHECK(a.iterations == b.iterations);
  CHECK(std::memcmp(&a.residual, &b.residual, sizeof(double)) == 0);
  CHECK(a.J == b.J);
  CHECK(a.Abar == b.Abar);
  REQUIRE(a.xbar.values.size() == b.xbar.values.size());
  for (std::size_t i = 0; i < a.xbar.values.size(); ++i) {
    CHECK(a.xbar.values[i] == b.xbar.values[i]);
    CHECK(a.mubar.values[i] == b.mubar.values[i]);
    CHECK(a.s[0].values[i] == b.s[0].values[i]);
  }
}

TEST_CASE("unstable aggregate drift is reported as divergence") {
  auto spec = scalar_spec(0.5);
  spec.subpops[0].F = scalar(5.0);
  try {
    solve_consistency(spec);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("consistency iteration diverged") == 0);
  }
}

TEST_CASE("solver config validation") {
  auto spec = coupled_two_type_spec();
  SolverConfig cfg;
  cfg.damping = 0.0;
  CHECK_THROWS_AS(solve_consistency(spec, cfg), InputError);
  cfg.damping = 0.5;
  cfg.tol = 0.0;
  CHECK_THROWS_AS(solve_consistency(spec, cfg), InputError);
  spec.pi(0) = 0.9;
  CHECK_THROWS_AS(solve_consistency(spec), InputError);
}

TEST_CASE("finite horizon without coupling matches the tanh Riccati path") {
  auto spec = scalar_spec(0.0);
  spec.rho = 0.0;
  const TimeGrid grid(0, 4, 400);
  auto sol = solve_finite_horizon(spec, {scalar(0.0)}, {VectorXd::Zero(1)}, grid);
  CHECK(sol.iterations == 1);
  // x' = -tanh(T - t) x, so x(t) = cosh(T - t) / cosh(T).
  for (int i = 0; i <= 400; i += 40) {
    const double t = grid.at(i);
    CHECK(std::abs(sol.Pi[0].node(i)(0, 0) - std::tanh(4 - t)) < 1e-8);
    CHECK(std::abs(sol.xbar.node(i)(0) - std::cosh(4 - t) / std::cosh(4.0)) < 1e-7);
    CHECK(sol.J[static_cast<std::size_t>(i)](0, 0) == doctest::Approx(-std::tanh(4 - t)));
  }
}

TEST_CASE("solution export") {
  auto spec = scalar_spec();
  SolverConfig cfg;
  cfg.horizon = 2;
  cfg.steps = 100;
  auto sol = solve_consistency(spec, cfg);
  auto j = solution_to_json(sol, 10);
  CHECK(j["t"].size() == 11);
  CHECK(j["xbar"].size() == 11);
  CHECK(j["iterations"] == 1);
  CHECK_THROWS_AS(solution_to_json(sol, 0), InputError);
}
