#include "emfg/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace emfg {

namespace {

MatrixXd symmetrize(const MatrixXd& M) { return 0.5 * (M + M.transpose()); }

// Quadratic term (Pi B + S) R^-1 (B^T Pi + S^T).
MatrixXd gain_term(const SubpopParams& p, const MatrixXd& Pi) {
  const MatrixXd G = Pi * p.B + p.S;
  return G * p.R.ldlt().solve(G.transpose());
}

int default_steps_per_unit(const SubpopParams& p, double rho) {
  const double brb = (p.B * p.R.ldlt().solve(p.B.transpose())).norm();
  const double scale = p.A.norm() + rho + std::sqrt(brb * (p.Q.norm() + 1.0)) +
                       p.S.norm() * std::sqrt(brb) + 1.0;
  return std::clamp(static_cast<int>(std::ceil(40.0 * scale)), 50, 20000);
}

}  // namespace

MatrixXd riccati_time_derivative(const SubpopParams& p, double rho, const MatrixXd& Pi) {
  return rho * Pi - Pi * p.A - p.A.transpose() * Pi + gain_term(p, Pi) - p.Q;
}

MatrixXd are_residual_matrix(const SubpopParams& p, double rho, const MatrixXd& Pi) {
  return riccati_time_derivative(p, rho, Pi);
}

MatrixXd closed_loop_matrix(const SubpopParams& p, const MatrixXd& Pi) {
  return p.A - p.B * p.R.ldlt().solve(p.B.transpose() * Pi + p.S.transpose());
}

RiccatiSolution solve_discounted_are(const SubpopParams& p, double rho, const RiccatiOptions& opts) {
  const auto n = p.n();
  const int spu = opts.steps_per_unit > 0 ? opts.steps_per_unit : default_steps_per_unit(p, rho);
  const double h = 1.0 / spu;

  double max_horizon = opts.max_horizon;
  if (max_horizon <= 0.0) {
    // Convergence rate is unknown before Pi exists; budget for the slowest
    // of rho and the open-loop margin, never below 0.1.
    const double margin = std::abs(0.5 * rho - spectral_abscissa(p.A));
    max_horizon = 200.0 / std::max(std::min(rho, margin), 0.1);
  }

  // Backward time tau = T - t: dPi/dtau = -dPi/dt.
  auto backward = [&](const MatrixXd& P) -> MatrixXd { return -riccati_time_derivative(p, rho, P); };

  MatrixXd Pi = MatrixXd::Zero(n, n);
  RiccatiSolution sol;
  double elapsed = 0.0;
  while (elapsed < max_horizon) {
    const MatrixXd start = Pi;
    for (int i = 0; i < spu; ++i) {
      const MatrixXd k1 = backward(Pi);
      const MatrixXd k2 = backward(Pi + 0.5 * h * k1);
      const MatrixXd k3 = backward(Pi + 0.5 * h * k2);
      const MatrixXd k4 = backward(Pi + h * k3);
      Pi = symmetrize(Pi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    elapsed += 1.0;
    ++sol.iterations;
    if (!Pi.allFinite()) {
      std::ostringstream os;
      os << "Riccati did not stabilize (finite escape after " << elapsed << " time units)";
      throw NumericalError(os.str());
    }
    const double change = (Pi - start).norm();
    const double residual = are_residual_matrix(p, rho, Pi).norm();
    if (change < opts.tol * (1.0 + Pi.norm()) && residual <= opts.tol) {
      sol.Pi = Pi;
      sol.residual = residual;
      sol.closed_loop_abscissa = spectral_abscissa(closed_loop_matrix(p, Pi));
      return sol;
    }
  }
  throw NumericalError("Riccati did not stabilize");
}

MatrixTrajectory solve_differential_riccati(const SubpopParams& p, double rho,
                                            const MatrixXd& Pi_T, const TimeGrid& grid) {
  if (!is_symmetric(Pi_T)) throw InputError("differential Riccati: terminal value not symmetric");
  MatrixOdeRhs rhs = [&](double, const MatrixXd& P) -> MatrixXd {
    return riccati_time_derivative(p, rho, P);
  };
  try {
    MatrixTrajectory tr = integrate_matrix_ode(rhs, Pi_T, grid, Direction::kBackward);
    for (auto& v : tr.values) v = symmetrize(v);
    return tr;
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("differential Riccati: finite escape; ") + e.what());
  }
}

StabilityReport verify_stability(const RiccatiSolution& sol, const MatrixXd& Abar, double rho) {
  StabilityReport rep;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(sol.Pi), Eigen::EigenvaluesOnly);
  rep.pi_min_eigenvalue = es.eigenvalues().minCoeff();
  rep.abar_margin = 0.5 * rho - spectral_abscissa(Abar);
  rep.closed_loop_margin = 0.5 * rho - sol.closed_loop_abscissa;
  if (!(rep.pi_min_eigenvalue > -psd_floor(sol.Pi))) rep.failures.push_back("Pi not positive definite");
  if (!(rep.abar_margin > 0.0)) rep.failures.push_back("Abar - (rho/2) I not stable");
  if (!(rep.closed_loop_margin > 0.0)) rep.failures.push_back("closed loop - (rho/2) I not stable");
  rep.ok = rep.failures.empty();
  return rep;
}

}  // namespace emfg
