#include <doctest.h>

#include <cmath>
#include <sstream>

#include "emfg/simulator.hpp"
#include "fixtures.hpp"

using namespace emfg;
using emfg::testing::coupled_single_type_spec;
using emfg::testing::coupled_two_type_spec;
using emfg::testing::scalar;
using emfg::testing::scalar_spec;

namespace {

MeanFieldSolution solve(const PopulationSpec& spec, double horizon = 0.0) {
  SolverConfig cfg;
  cfg.horizon = horizon;
  return solve_consistency(spec, cfg);
}

SimConfig config_for(const std::vector<long>& counts, double T, int steps, std::uint64_t seed = 7) {
  SimConfig cfg;
  cfg.counts = counts;
  cfg.grid = TimeGrid(0.0, T, steps);
  cfg.seed = seed;
  return cfg;
}

PopulationSpec noisy_scalar(double sigma, double lambda, double rho = 0.5) {
  auto spec = scalar_spec(rho);
  spec.subpops[0].D = scalar(sigma);
  spec.subpops[0].lambda_explore = lambda;
  return spec;
}

// Discrete-time value iteration for min E sum h e^{-rho h j} (x^2 + u^2)/2 with
// x' = x + h u + sigma sqrt(h) xi, on a grid, 3-point Gauss-Hermite in xi.
double dp_value_at(double x0, double sigma, double rho, double h) {
  const int nodes = 241;
  const double lo = -3.0, hi = 3.0, dx = (hi - lo) / (nodes - 1);
  std::vector<double> V(nodes, 0.0), next(nodes);
  const double beta = std::exp(-rho * h);
  const double xi[3] = {-std::sqrt(3.0), 0.0, std::sqrt(3.0)};
  const double wq[3] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
  auto interp = [&](double x) {
    x = std::clamp(x, lo, hi);
    // quadratic through the three nearest nodes
    const int i = std::clamp(static_cast<int>(std::lround((x - lo) / dx)), 1, nodes - 2);
    const double f = (x - lo) / dx - i;
    return 0.5 * f * (f - 1.0) * V[i - 1] + (1.0 - f * f) * V[i] + 0.5 * f * (f + 1.0) * V[i + 1];
  };
  for (int it = 0; it < 20000; ++it) {
    double change = 0.0;
    for (int i = 0; i < nodes; ++i) {
      const double x = lo + i * dx;
      auto q = [&](double u) {
        double ev = 0.0;
        for (int k = 0; k < 3; ++k) ev += wq[k] * interp(x + h * u + sigma * std::sqrt(h) * xi[k]);
        return h * 0.5 * (x * x + u * u) + beta * ev;
      };
      double a = -4.0, b = 4.0;
      const double g = (std::sqrt(5.0) - 1.0) / 2.0;
      for (int s = 0; s < 60; ++s) {
        const double c = b - g * (b - a), d = a + g * (b - a);
        if (q(c) < q(d)) b = d; else a = c;
      }
      next[i] = q(0.5 * (a + b));
      change = std::max(change, std::abs(next[i] - V[i]));
    }
    V.swap(next);
    if (change < 1e-10) break;
  }
  return interp(x0);
}

}  // namespace

TEST_CASE("deterministic identical agents follow the mean field") {
  auto spec = coupled_single_type_spec();
  spec.subpops[0].D = scalar(0.0);
  spec.subpops[0].lambda_explore = 0.0;
  spec.x0_cov = scalar(0.0);
  const auto mf = solve(spec);
  auto cfg = config_for({4}, 5.0, 500);
  cfg.mode = SimMode::kClassical;
  const auto batch = simulate_population(spec, mf, cfg);
  for (std::size_t j = 0; j < batch.states.size(); ++j) {
    const MatrixXd& X = batch.states[j];
    for (int i = 1; i < 4; ++i) CHECK(X(0, i) == X(0, 0));
    const double t = batch.grid.at(batch.record_steps[j]);
    CHECK(std::abs(X(0, 0) - mf.xbar.smooth_at(t)(0)) < 1e-2);
  }
}

TEST_CASE("single decoupled agent is a plain Euler-Maruyama LQG simulation") {
  const auto spec = noisy_scalar(0.3, 0.2);
  const auto mf = solve(spec);
  auto cfg = config_for({1}, 3.0, 300);
  cfg.keep_noise = true;
  cfg.mode = SimMode::kClassical;
  const auto batch = simulate_population(spec, mf, cfg);
  const double Pi = mf.Pi[0].Pi(0, 0);
  double x = batch.states[0](0, 0);
  CHECK(x == 1.0);
  for (int j = 0; j < 300; ++j) {
    const double s = mf.s[0].smooth_at(batch.grid.at(j))(0);
    x += 0.01 * (-Pi * x - s) + 0.3 * batch.brownian[static_cast<std::size_t>(j)](0, 0);
    CHECK(std::abs(batch.states[static_cast<std::size_t>(j + 1)](0, 0) - x) < 1e-12);
  }
}

TEST_CASE("sampled action covariance matches lambda R^-1") {
  const auto spec = coupled_two_type_spec();
  const auto mf = solve(spec);
  const auto batch = simulate_population(spec, mf, config_for({100, 1000}, 1.0, 100));
  // type b agents: lambda = 0.1, R = 0.5
  double ss = 0.0;
  long count = 0;
  for (std::size_t j = 0; j < batch.actions.size(); ++j)
    for (Eigen::Index i = 100; i < 1100; ++i, ++count) {
      const double d = batch.actions[j](0, i) - batch.means[j](0, i);
      ss += d * d;
    }
  CHECK(count >= 100000);
  CHECK(std::abs(ss / count - 0.2) < 0.02 * 0.2);
}

TEST_CASE("drift uses policy means, not sampled actions") {
  auto spec = coupled_single_type_spec();
  spec.subpops[0].lambda_explore = 1e4;
  const auto mf = solve(spec);
  auto cfg = config_for({32}, 2.0, 200);
  cfg.mode = SimMode::kExploratory;
  const auto wild = simulate_population(spec, mf, cfg);
  cfg.mode = SimMode::kClassical;
  const auto calm = simulate_population(spec, mf, cfg);
  CHECK(std::abs(wild.actions.back()(0, 0) - wild.means.back()(0, 0)) > 1.0);
  for (std::size_t j = 0; j < wild.states.size(); ++j) CHECK(wild.states[j] == calm.states[j]);
}

TEST_CASE("batches are deterministic and their averages recomputable") {
  const auto spec = coupled_two_type_spec();
  const auto mf = solve(spec);
  const auto cfg = config_for({6, 4}, 1.0, 50);
  const auto a = simulate_population(spec, mf, cfg);
  const auto b = simulate_population(spec, mf, cfg);
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t j = 0; j < a.states.size(); ++j) {
    CHECK(a.states[j] == b.states[j]);
    CHECK(a.actions[j] == b.actions[j]);
  }
  CHECK(a.cost_sampled == b.cost_sampled);
  CHECK(a.mixture(0) == 0.6);
  CHECK(a.mixture(1) == 0.4);
  for (std::size_t j = 0; j < a.states.size(); ++j) {
    const auto step = static_cast<std::size_t>(a.record_steps[j]);
    CHECK((a.x_avg[step] - a.states[j].rowwise().mean()).norm() < 1e-15);
    CHECK((a.mu_avg[step] - a.means[j].rowwise().mean()).norm() < 1e-15);
    CHECK(std::abs(a.xbar[step](1) - a.states[j].rightCols(4).mean()) < 1e-15);
  }
}

TEST_CASE("representative agent") {
  auto spec = coupled_single_type_spec();
  const auto mf = solve(spec);
  const TimeGrid grid(0.0, 4.0, 800);

  SUBCASE("mean over many paths tracks the mean field") {
    auto cfg = config_for({10000}, 4.0, 800);
    cfg.coupling = Coupling::kMeanField;
    cfg.record_stride = 200;
    const auto batch = simulate_population(spec, mf, cfg);
    for (std::size_t j = 1; j < batch.states.size(); ++j) {
      const auto& row = batch.states[j].row(0);
      const double mean = row.mean();
      const double se = std::sqrt((row.array() - mean).square().sum() / 9999.0 / 10000.0);
      CHECK(std::abs(mean - mf.xbar.smooth_at(grid.at(batch.record_steps[j]))(0)) < 5.0 * se);
    }
  }

  SUBCASE("noiseless path equals the mean field up to Euler error") {
    spec.subpops[0].D = scalar(0.0);
    spec.subpops[0].lambda_explore = 0.0;
    spec.x0_cov = scalar(0.0);
    const auto mf0 = solve(spec);
    const auto path = simulate_representative(spec, mf0, grid, 3, 0);
    for (int j = 0; j <= grid.steps; j += 40)
      CHECK(std::abs(path.node(j)(0) - mf0.xbar.smooth_at(grid.at(j))(0)) < 5e-3);
  }

  SUBCASE("continuous in lambda at zero") {
    spec.subpops[0].lambda_explore = 0.0;
    const auto a = simulate_representative(spec, solve(spec), grid, 11, 0);
    spec.subpops[0].lambda_explore = 1e-12;
    const auto b = simulate_representative(spec, solve(spec), grid, 11, 0);
    for (int j = 0; j <= grid.steps; ++j) CHECK(std::abs(a.node(j)(0) - b.node(j)(0)) < 1e-5);
  }
}

TEST_CASE("empirical costs") {
  SUBCASE("all-zero classical cost") {
    auto spec = scalar_spec();
    spec.x0_mean = VectorXd::Zero(1);
    const auto mf = solve(spec);
    auto cfg = config_for({3}, 30.0, 300);
    cfg.mode = SimMode::kClassical;
    const auto cost = empirical_cost(simulate_population(spec, mf, cfg), spec, 0, CostMode::kClassical);
    CHECK(cost.mean == 0.0);
    CHECK(cost.std_err == 0.0);
  }

  SUBCASE("decoupled classical cost against a dynamic-programming oracle") {
    const double sigma = 0.3, rho = 0.5, h = 0.02;
    const auto spec = noisy_scalar(sigma, 0.0, rho);
    const auto mf = solve(spec, 40.0);
    auto cfg = config_for({4000}, 30.0, 1500);
    cfg.mode = SimMode::kClassical;
    cfg.record_stride = 1500;
    const auto cost = empirical_cost(simulate_population(spec, mf, cfg), spec, 0, CostMode::kClassical);
    const double dp = dp_value_at(1.0, sigma, rho, h);
    const double Pi = mf.Pi[0].Pi(0, 0);
    MESSAGE("MC " << cost.mean << " +- " << cost.std_err << ", DP " << dp);
    CHECK(std::abs(dp - (0.5 * Pi + sigma * sigma * Pi / (2.0 * rho))) < 0.02 * dp);
    CHECK(std::abs(cost.mean - dp) < 4.0 * cost.std_err + 0.005 * dp);
  }

  SUBCASE("entropy regularization shifts the cost by a closed form") {
    const auto spec = coupled_two_type_spec();
    const auto mf = solve(spec);
    const auto batch = simulate_population(spec, mf, config_for({30, 20}, 20.0, 1000));
    for (Eigen::Index k = 0; k < 2; ++k) {
      const auto plain = empirical_cost(batch, spec, k, CostMode::kExploratory);
      const auto reg = empirical_cost(batch, spec, k, CostMode::kRegularized);
      const double lam = spec.subpops[static_cast<std::size_t>(k)].lambda_explore;
      const double expected = -lam * policy_entropy(k, spec) * (1.0 - std::exp(-spec.rho * 20.0)) / spec.rho;
      CHECK(reg.mean - plain.mean == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("truncation bound covers the omitted tail") {
    const auto spec = noisy_scalar(0.3, 0.2);
    const auto mf = solve(spec, 30.0);
    auto cfg = config_for({200}, 10.0, 1000);
    const auto short_run = simulate_population(spec, mf, cfg);
    cfg.grid = TimeGrid(0.0, 20.0, 2000);
    const auto long_run = simulate_population(spec, mf, cfg);
    for (auto mode : {CostMode::kClassical, CostMode::kExploratory, CostMode::kRegularized}) {
      const auto a = empirical_cost(short_run, spec, 0, mode, 1.0);
      const auto b = empirical_cost(long_run, spec, 0, mode, 1.0);
      CHECK(a.truncation_bound > 0.0);
      CHECK(a.truncation_bound >= std::abs(b.mean - a.mean));
    }
    CHECK_THROWS_WITH_AS(empirical_cost(short_run, spec, 0, CostMode::kClassical, 1e-6),
                         doctest::Contains("horizon too short for rho"), InputError);
  }
}

TEST_CASE("simulation errors") {
  const auto spec = coupled_single_type_spec();
  const auto mf = solve(spec);
  CHECK_THROWS_AS(simulate_population(spec, mf, config_for({0}, 1.0, 10)), InputError);
  CHECK_THROWS_AS(simulate_population(spec, mf, config_for({2, 2}, 1.0, 10)), InputError);
  CHECK_THROWS_WITH_AS(simulate_population(spec, mf, config_for({2}, mf.grid().t1 + 10.0, 10)),
                       doctest::Contains("exceeds the solved horizon"), InputError);

  auto stiff = scalar_spec();
  stiff.subpops[0].Q = scalar(900.0);
  const auto mf_stiff = solve(stiff, 400.0);
  auto cfg = config_for({2}, 300.0, 300);
  cfg.mode = SimMode::kClassical;
  CHECK_THROWS_WITH_AS(simulate_population(stiff, mf_stiff, cfg), doctest::Contains("non-finite state for agent 0"),
                       NumericalError);
}

TEST_CASE("proportional counts") {
  CHECK(proportional_counts(VectorXd::Ones(1), 17) == std::vector<long>{17});
  CHECK(proportional_counts((VectorXd(2) << 0.6, 0.4).finished(), 10) == std::vector<long>{6, 4});
  CHECK(proportional_counts((VectorXd(3) << 0.5, 0.25, 0.25).finished(), 64) == std::vector<long>{32, 16, 16});
  const auto c = proportional_counts((VectorXd(3) << 1.0 / 3, 1.0 / 3, 1.0 / 3).finished(), 10);
  CHECK(c[0] + c[1] + c[2] == 10);
}

TEST_CASE("uncoupled experiments have no finite-population effect") {
  auto spec = noisy_scalar(0.3, 0.2);
  spec.x0_cov = scalar(0.04);
  const auto mf = solve(spec);
  ExperimentOptions opts;
  opts.horizon = 4.0;
  opts.dt = 0.02;
  const auto gap = coupling_gap_experiment(spec, mf, {4, 8, 16}, 3, 5, opts);
  for (double v : gap.value) CHECK(v == 0.0);
  CHECK(std::isnan(gap.slope));

  Deviation shift{VectorXd::Constant(1, 0.1), 1.0, 1.0};
  opts.horizon = 20.0;
  const auto cost = cost_gap_experiment(spec, mf, {4, 8, 16}, 3, 5, shift, opts);
  for (double v : cost.value) CHECK(v == 0.0);

  const auto nash = nash_deviation_experiment(spec, mf, 8, default_deviation_family(1), 32, 9, opts);
  for (std::size_t f = 0; f < nash.gain.size(); ++f) CHECK(nash.gain[f] < 3.0 * nash.gain_std_err[f] + 1e-12);
}

TEST_CASE("coupled experiments") {
  const auto spec = coupled_single_type_spec();
  const auto mf = solve(spec);
  ExperimentOptions opts;
  opts.horizon = 4.0;
  opts.dt = 0.02;

  const auto gap = coupling_gap_experiment(spec, mf, {8, 32, 128}, 16, 21, opts);
  CHECK(gap.value.front() > gap.value.back());
  CHECK(gap.slope < -0.5);
  CHECK(gap.rows.size() == 3 * 17);
  CHECK(gap.rows.back().rep == -1);
  CHECK(gap.rows.back().checkpoint_t == doctest::Approx(2.0));

  opts.horizon = 20.0;
  const auto nash = nash_deviation_experiment(spec, mf, 8, {Deviation{VectorXd::Zero(1), 1.0, 1.0}}, 4, 3, opts);
  CHECK(nash.eps_hat == 0.0);
  CHECK(nash.gain.front() == 0.0);
}

TEST_CASE("cost of exploration") {
  auto spec = noisy_scalar(0.3, 0.2, 0.1);
  const auto mf = solve(spec, 120.0);
  ExperimentOptions opts;
  opts.horizon = 100.0;
  opts.dt = 0.05;
  const auto coe = coe_experiment(spec, mf, 0, 2000, 17, opts);
  MESSAGE("COE " << coe.estimate << " +- " << coe.std_err);
  CHECK(coe.analytic == doctest::Approx(1.0));
  CHECK(std::abs(coe.estimate - 1.0) < 3.0 * coe.std_err + 1e-3);

  spec.subpops[0].lambda_explore = 0.0;
  const auto none = coe_experiment(spec, solve(spec, 120.0), 0, 100, 17, opts);
  CHECK(none.estimate == 0.0);
}

TEST_CASE("csv export") {
  std::ostringstream out;
  write_csv(out, {{"coupling_gap", 16, 0, 5.0, 0.25, 0.0}, {"coupling_gap", 16, -1, 5.0, 0.5, 0.125}});
  CHECK(out.str() ==
        "experiment,N,rep,checkpoint_t,value,std_err\n"
        "coupling_gap,16,0,5,0.25,0\n"
        "coupling_gap,16,-1,5,0.5,0.125\n");
}

TEST_CASE("equilibrium beats perturbed policies against the limit mean field") {
  const auto spec = coupled_single_type_spec();
  const auto mf = solve(spec);
  ExperimentOptions opts;
  opts.horizon = 15.0;
  opts.dt = 0.02;
  const std::vector<Deviation> family{{VectorXd::Constant(1, 0.5), 1.0, 1.0}, {VectorXd::Zero(1), 2.0, 1.0},
                                      {VectorXd::Zero(1), 1.0, 1.0}};
  const auto res = representative_optimality_experiment(spec, mf, 0, family, 400, 4, opts);
  CHECK(res.excess[0] > 3.0 * res.excess_std_err[0]);
  CHECK(res.excess[1] > 3.0 * res.excess_std_err[1]);
  CHECK(res.excess[2] == 0.0);
  // variance scaling only changes the action-noise cost: (lambda m / 2)(c - 1 - ln c) per unit time
  const double expected = 0.5 * 0.2 * (2.0 - 1.0 - std::log(2.0)) * (1.0 - std::exp(-0.5 * 15.0)) / 0.5;
  CHECK(std::abs(res.excess[1] - expected) < 4.0 * res.excess_std_err[1] + 0.01 * expected);
}
