#pragma once

#include <vector>

#include "emfg/riccati.hpp"

namespace emfg {

/// Solved equilibrium on [0, T]. Stacked quantities follow the type order of
/// the PopulationSpec: xbar and mbar are nK-vectors, L and mubar are mK-vectors.
struct MeanFieldSolution {
  std::vector<RiccatiSolution> Pi;
  std::vector<Trajectory> s;  // offset per type, n-vectors
  MatrixXd J;                 // mK x nK
  Trajectory L;
  MatrixXd Abar;              // nK x nK, row block k is Abar_k
  Trajectory mbar;
  Trajectory xbar;
  Trajectory mubar;
  double residual = 0.0;
  int iterations = 0;

  const TimeGrid& grid() const { return xbar.grid; }
};

struct SolverConfig {
  double horizon = 0.0;  // <= 0: chosen from the discount and the slowest mode
  int steps = 0;         // <= 0: step about 0.02, finer for fast modes
  double damping = 0.5;
  double tol = 1e-10;
  int max_iters = 1000;
  RiccatiOptions riccati;
};

/// The classical and the exploratory consistency systems are the same map;
/// the label only documents which one the caller asked for.
enum class Formulation { kClassical, kExploratory };

/// J with row block k equal to -R^-1 (B^T Pi + S^T) e_k + R^-1 S^T psibar_k.
MatrixXd feedback_gain_matrix(const PopulationSpec& spec, const std::vector<MatrixXd>& Pis);

/// L = stacked -R^-1 (B^T s_k + n_k).
VectorXd feedforward(const PopulationSpec& spec, const std::vector<VectorXd>& s);

/// Abar row block k: (A - B R^-1 (B^T Pi + S^T)) e_k + B R^-1 S^T psibar_k + Fbar_k + Hbar_k J.
MatrixXd aggregate_drift_matrix(const PopulationSpec& spec, const std::vector<MatrixXd>& Pis,
                                const MatrixXd& J);

/// mbar_k = -B R^-1 (B^T s_k + n_k) + Hbar_k L + b_k(t).
VectorXd aggregate_offset(const PopulationSpec& spec, const std::vector<VectorXd>& s,
                          const VectorXd& L, double t);

struct FeedbackGains {
  MatrixXd J;
  Trajectory L;
};

struct AggregateDrift {
  MatrixXd Abar;
  Trajectory mbar;
};

FeedbackGains feedback_gains(const std::vector<RiccatiSolution>& Pis,
                             const std::vector<Trajectory>& s, const PopulationSpec& spec);

AggregateDrift aggregate_drift(const PopulationSpec& spec, const std::vector<RiccatiSolution>& Pis,
                               const MatrixXd& J, const std::vector<Trajectory>& s);

struct SteadyState {
  std::vector<VectorXd> s;
  VectorXd xbar;
};

/// Joint stationary point of the offset and mean-state equations. A
/// time-varying b_k is replaced by its final (tail) value.
/// Throws NumericalError("steady state undefined") when singular.
SteadyState steady_state(const PopulationSpec& spec, const std::vector<RiccatiSolution>& Pis);

/// Damped Picard iteration on (xbar, mubar). Throws NumericalError
/// "consistency iteration diverged" when Abar - (rho/2) I is not stable,
/// the iterates blow up, or max_iters is reached.
MeanFieldSolution solve_consistency(const PopulationSpec& spec, const SolverConfig& config = {},
                                    Formulation formulation = Formulation::kExploratory);

/// Max defect of the consistency equations re-evaluated from the solution's
/// own components, with time derivatives from finite differences.
double consistency_residual(const MeanFieldSolution& solution, const PopulationSpec& spec);

/// Finite-horizon equilibrium: Pi_k(t) from the differential Riccati equation
/// with terminal value Pi_T[k], offsets with terminal value s_T[k]. rho may be 0.
struct FiniteHorizonSolution {
  std::vector<MatrixTrajectory> Pi;
  std::vector<Trajectory> s;
  std::vector<MatrixXd> J;  // per grid node
  Trajectory L;
  Trajectory xbar;
  Trajectory mubar;
  int iterations = 0;

  const TimeGrid& grid() const { return xbar.grid; }
};

FiniteHorizonSolution solve_finite_horizon(const PopulationSpec& spec,
                                           const std::vector<MatrixXd>& Pi_T,
                                           const std::vector<VectorXd>& s_T, const TimeGrid& grid,
                                           const SolverConfig& config = {});

nlohmann::json solution_to_json(const MeanFieldSolution& sol, int stride = 1);

}  // namespace emfg
