#pragma once

#include <string>
#include <vector>

#include "emfg/numerics.hpp"

namespace emfg {

struct RiccatiSolution {
  MatrixXd Pi;
  double residual = 0.0;
  int iterations = 0;  // number of unit-time windows integrated
  double closed_loop_abscissa = 0.0;
};

struct RiccatiOptions {
  double tol = 1e-10;
  /// Maximum backward horizon; <= 0 selects 200 / max(rho, |margin|, 0.1).
  double max_horizon = 0.0;
  /// RK4 steps per unit time; <= 0 derives it from the problem scale.
  int steps_per_unit = 0;
};

/// dPi/dt of the differential Riccati equation in forward time:
/// rho Pi = Pi' + Pi A + A^T Pi - (Pi B + S) R^-1 (B^T Pi + S^T) + Q.
MatrixXd riccati_time_derivative(const SubpopParams& p, double rho, const MatrixXd& Pi);

/// rho Pi - Pi A - A^T Pi + (Pi B + S) R^-1 (B^T Pi + S^T) - Q.
MatrixXd are_residual_matrix(const SubpopParams& p, double rho, const MatrixXd& Pi);

/// A - B R^-1 (B^T Pi + S^T).
MatrixXd closed_loop_matrix(const SubpopParams& p, const MatrixXd& Pi);

/// Stationary discounted Riccati solution, obtained by integrating the
/// differential equation backward from Pi(T) = 0 until it stops moving.
/// Throws NumericalError("Riccati did not stabilize") past the max horizon.
RiccatiSolution solve_discounted_are(const SubpopParams& p, double rho,
                                     const RiccatiOptions& opts = {});

/// Backward RK4 solution on the grid with terminal value Pi_T at grid.t1.
MatrixTrajectory solve_differential_riccati(const SubpopParams& p, double rho,
                                            const MatrixXd& Pi_T, const TimeGrid& grid);

struct StabilityReport {
  bool ok = false;
  double pi_min_eigenvalue = 0.0;       // > 0 required
  double abar_margin = 0.0;             // rho/2 - abscissa(Abar) > 0 required
  double closed_loop_margin = 0.0;      // rho/2 - abscissa(A - BR^-1 S^T - BR^-1 B^T Pi) > 0
  std::vector<std::string> failures;
};

StabilityReport verify_stability(const RiccatiSolution& sol, const MatrixXd& Abar, double rho);

}  // namespace emfg
