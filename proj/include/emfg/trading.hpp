#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "emfg/meanfield.hpp"

namespace emfg {

/// Optimal execution with permanent and temporary price impact. Each trader
/// holds inventory q, trades at rate nu, and the midprice F drifts with the
/// average trading rate.
struct MarketParams {
  double sigma = 0.1;         // midprice volatility
  double lambda_perm = 0.05;  // permanent impact of the average trading rate
  double a_temp = 0.01;       // temporary impact of the trader's own cumulative trades
  double phi_urgency = 0.1;
  double psi_terminal = 1.0;
  double T = 1.0;
  double F0 = 100.0;
  double q0 = 10.0;
  double fee = 0.05;     // quadratic trading fee; makes the control cost positive definite
  double explore = 0.0;  // exploration temperature
};

void validate_market(const MarketParams& p);
nlohmann::json market_to_json(const MarketParams& p);
MarketParams market_from_json(const nlohmann::json& j);
MarketParams load_market(const std::string& path);

/// State (q, F - F0), control nu, one type. Running cost
/// 1/2 phi q^2 + (a q + G) nu - a q0 nu + 1/2 fee nu^2, terminal
/// 1/2 x^T terminal x with terminal = [[2 psi, -1], [-1, 0]], rho = 0.
/// Constant terms (q0 F0) are dropped.
struct TradingModel {
  PopulationSpec spec;
  MatrixXd terminal;
};

TradingModel to_lqg(const MarketParams& p);

/// Time-varying linear feedback nu = gain(t) (q, F - F0) + offset(t) from the
/// finite-horizon equilibrium, with Gaussian exploration of variance
/// explore / fee around it.
struct TradingPolicy {
  TimeGrid grid;
  std::vector<Eigen::RowVector2d> gains;
  std::vector<double> offsets;
  double variance = 0.0;
  VectorXd mean_inventory;  // planned average inventory per node

  double mean(double t, double q, double G) const;
  /// nu = rate, no exploration.
  static TradingPolicy constant(const TimeGrid& grid, double rate);
};

/// Solves the finite-horizon equilibrium for the believed parameters. The
/// grid has at least min_steps steps, refined until the terminal Riccati
/// rate is resolved.
TradingPolicy plan_policy(const MarketParams& believed, int min_steps = 200);

struct MarketPaths {
  TimeGrid grid;
  VectorXd F;      // steps + 1
  MatrixXd q;      // traders x (steps + 1)
  MatrixXd nu;     // traders x steps, executed rates
  MatrixXd S;      // traders x steps, execution prices
  MatrixXd Z;      // traders x (steps + 1), cash
  VectorXd nu_bar; // steps
  VectorXd cost;   // realized cost per trader
};

/// Euler scheme for the market on `grid`. Every trader follows `policy`,
/// sampling when its variance is positive. The midprice moves with the
/// executed average rate.
MarketPaths simulate_market(const MarketParams& truth, const TradingPolicy& policy, long traders,
                            const TimeGrid& grid, std::uint64_t seed);

struct PriceRow {
  double dt;
  double dF;
  double nu_bar;
};

struct ExecutionRow {
  double gap;     // S - F
  double cum_nu;  // q - q0
};

struct MarketDataset {
  std::vector<PriceRow> prices;
  std::vector<ExecutionRow> executions;

  void append(const MarketPaths& paths, double q0);
  std::size_t rows() const { return prices.size(); }
};

struct MarketEstimate {
  double sigma = 0.0;
  double sigma_se = 0.0;
  double lambda_perm = 0.0;
  double lambda_se = 0.0;
  double a_temp = 0.0;
  double a_se = 0.0;
  bool lambda_identified = false;
  bool a_identified = false;
};

/// Least squares: dF on nu_bar dt (no intercept), sigma^2 from the residual
/// quadratic variation, S - F on cumulative nu. Degenerate regressors clear
/// the identified flags and leave the coefficient at 0.
MarketEstimate estimate_params(const MarketDataset& data);

/// Throws InputError when the permanent impact was not identified.
void require_identified(const MarketEstimate& est);

struct EpisodeConfig {
  long traders = 20;
  int steps = 200;
  int episodes = 1;       // per acting round
  int inner_repeats = 5;  // planning + acting rounds per model update
  std::uint64_t seed = 0;
};

struct LearningStep {
  int iteration = 0;
  MarketEstimate estimate;
  MarketParams believed;
  double gain_q = 0.0;  // feedback on own inventory at t = 0
  double offset = 0.0;  // at t = 0
  double cost = 0.0;    // realized, averaged over traders and episodes
  std::size_t rows = 0;
  bool failed = false;
  std::string message;
};

struct LearningTrace {
  std::vector<LearningStep> steps;
};

/// Model-based loop: act with the policy planned from init, then repeatedly
/// re-estimate (sigma, lambda_perm, a) on all data and run inner_repeats
/// planning + acting rounds. Iteration 0 is the initial policy. Each later
/// iteration adds inner_repeats * episodes * steps price rows.
LearningTrace rl_loop(const MarketParams& truth, const MarketParams& init, int iterations,
                      const EpisodeConfig& config);

void write_trace_csv(std::ostream& out, const LearningTrace& trace);
nlohmann::json trace_to_json(const LearningTrace& trace);

}  // namespace emfg
