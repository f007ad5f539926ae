#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emfg/policy.hpp"

namespace emfg {

enum class SimMode { kClassical, kExploratory };

/// kEmpirical: drift and tracking use the population averages.
/// kMeanField: they use the limit mean field, advanced with the same Euler
/// step as the agents so the two couplings differ only by finite-N effects.
enum class Coupling { kEmpirical, kMeanField };

/// Unilateral deviation of agent 0: mean mean_scale * mu* + delta,
/// covariance variance_factor * lambda R^-1.
struct Deviation {
  VectorXd delta;
  double variance_factor = 1.0;
  double mean_scale = 1.0;
};

struct SimConfig {
  std::vector<long> counts;  // agents per type; agents are numbered type by type
  TimeGrid grid{0.0, 10.0, 1000};
  std::uint64_t seed = 0;
  SimMode mode = SimMode::kExploratory;
  Coupling coupling = Coupling::kEmpirical;
  std::optional<Deviation> deviation;
  long deviators = 1;  // the first agents of the first non-empty type deviate
  int record_stride = 1;  // per-agent paths kept every record_stride steps (and at the end)
  bool keep_noise = false;

  long N() const;
};

struct SimulationBatch {
  TimeGrid grid;
  std::vector<long> counts;
  VectorXd mixture;              // counts / N
  std::vector<int> agent_type;
  std::vector<int> record_steps;  // grid indices of the stored paths
  std::vector<MatrixXd> states;   // n x N per recorded step
  std::vector<MatrixXd> means;    // m x N policy means
  std::vector<MatrixXd> actions;  // m x N executed actions
  std::vector<MatrixXd> brownian; // r x N increments per step (keep_noise only)
  std::vector<VectorXd> xbar;     // per step: stacked per-type averages (nK)
  std::vector<VectorXd> x_avg;    // per step: population average (n)
  std::vector<VectorXd> mu_avg;   // per step: average policy mean (m)
  VectorXd cost_sampled;          // discounted original cost, executed actions
  VectorXd cost_mean;             // discounted original cost, action = policy mean
  std::vector<VectorXd> running_avg;  // per step: per-type average undiscounted running cost
};

/// Euler-Maruyama simulation of N agents. Agent i draws from its own stream
/// agent_stream(seed, i): initial state, then per step the action noise
/// followed by the Brownian increment. Noise is drawn even when unused, so
/// runs with equal seeds stay coupled across modes and couplings.
SimulationBatch simulate_population(const PopulationSpec& spec, const MeanFieldSolution& mf,
                                    const SimConfig& config);

/// One agent of type k against the limit mean field.
Trajectory simulate_representative(const PopulationSpec& spec, const MeanFieldSolution& mf, const TimeGrid& grid,
                                   std::uint64_t seed, Eigen::Index k, SimMode mode = SimMode::kExploratory);

/// Agents per type with counts / N as close to pi as possible (largest remainder).
std::vector<long> proportional_counts(const VectorXd& pi, long N);

enum class CostMode { kClassical, kExploratory, kRegularized };

struct CostEstimate {
  double mean = 0.0;
  double std_err = 0.0;
  VectorXd values;
  CostMode mode = CostMode::kClassical;
  double truncation_bound = 0.0;
};

/// Cost of the type-k agents. kClassical uses the policy means, kExploratory
/// the executed actions, kRegularized adds -lambda H (1 - e^{-rho T}) / rho.
/// Throws InputError("horizon too short for rho") when the tail bound
/// exceeds tail_tol * (1 + |mean|).
CostEstimate empirical_cost(const SimulationBatch& batch, const PopulationSpec& spec, Eigen::Index k, CostMode mode,
                            double tail_tol = 1e-2);

struct CsvRow {
  std::string experiment;
  long N = 0;
  long rep = -1;  // -1 for aggregate rows
  double checkpoint_t = 0.0;
  double value = 0.0;
  double std_err = 0.0;
};

void write_csv(std::ostream& out, const std::vector<CsvRow>& rows);

struct ExperimentOptions {
  double horizon = 10.0;
  double dt = 0.01;
  double checkpoint = -1.0;  // < 0: horizon / 2
  SimMode mode = SimMode::kExploratory;
};

struct RateResult {
  std::vector<long> Ns;
  std::vector<double> value;    // per N, averaged over reps
  std::vector<double> std_err;  // per N
  double slope = 0.0;           // fitted log-log slope
  std::vector<CsvRow> rows;
};

/// E||x^{i,N} - x^{i,inf}||^2 at the checkpoint, averaged over agents and reps,
/// with the finite and limit systems on common random numbers.
RateResult coupling_gap_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf,
                                   const std::vector<long>& Ns, int reps, std::uint64_t seed,
                                   const ExperimentOptions& opts = {});

/// |J^N - J^inf| of the regularized cost for agent 0 playing `deviation`
/// (nullopt: the equilibrium policy) while the others play the equilibrium.
RateResult cost_gap_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf, const std::vector<long>& Ns,
                               int reps, std::uint64_t seed, const std::optional<Deviation>& deviation,
                               const ExperimentOptions& opts = {});

struct NashResult {
  long N = 0;
  double eps_hat = 0.0;
  double cost_equilibrium = 0.0;
  std::vector<double> gain;          // J(Phi*) - J(dev) per family member
  std::vector<double> gain_std_err;
  std::vector<CsvRow> rows;
};

/// eps_hat = max(0, J^N(Phi*) - min over the family of J^N(dev)) for agent 0,
/// regularized cost, common random numbers across family members.
NashResult nash_deviation_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf, long N,
                                     const std::vector<Deviation>& family, int reps, std::uint64_t seed,
                                     const ExperimentOptions& opts = {});

/// Mean shifts, variance scalings and gain scalings around the equilibrium.
std::vector<Deviation> default_deviation_family(Eigen::Index m);

struct OptimalityResult {
  double cost_equilibrium = 0.0;
  std::vector<double> excess;          // J(dev) - J(Phi*) per family member
  std::vector<double> excess_std_err;
  std::vector<CsvRow> rows;
};

/// Regularized cost of `agents` independent type-k agents against the limit
/// mean field, all playing a family member, paired with the equilibrium run
/// on the same noise.
OptimalityResult representative_optimality_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf,
                                                      Eigen::Index k, const std::vector<Deviation>& family,
                                                      long agents, std::uint64_t seed,
                                                      const ExperimentOptions& opts = {});

struct CoeResult {
  double estimate = 0.0;
  double std_err = 0.0;
  double analytic = 0.0;
  std::vector<CsvRow> rows;
};

/// Original-cost difference between sampled and mean actions on the same
/// noise, for `reps` independent type-k agents against the limit mean field.
CoeResult coe_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf, Eigen::Index k, int reps,
                         std::uint64_t seed, const ExperimentOptions& opts);

}  // namespace emfg
