#pragma once

#include "emfg/meanfield.hpp"

namespace emfg {

/// Affine feedback u = gain x + offset(t), where
/// offset(t) = -R^-1 (B^T s(t) - S^T psibar xbar(t) + n).
/// Holds references to the PopulationSpec and the solution; both must outlive it.
class ControlLaw {
 public:
  ControlLaw(const PopulationSpec& spec, const MeanFieldSolution& mf, Eigen::Index k);

  const MatrixXd& gain() const { return gain_; }
  VectorXd offset(double t) const;
  VectorXd operator()(double t, const VectorXd& x) const { return gain_ * x + offset(t); }
  Eigen::Index type() const { return k_; }

 private:
  const PopulationSpec& spec_;
  const MeanFieldSolution& mf_;
  Eigen::Index k_;
  MatrixXd gain_;
  MatrixXd from_xbar_;  // R^-1 S^T psibar
};

/// Classical optimal action for an agent of type k at state x.
VectorXd classical_control(double t, const VectorXd& x, const MeanFieldSolution& mf,
                           const PopulationSpec& spec, Eigen::Index k);

/// N(mean, covariance) evaluated at one (t, x).
struct GaussianAction {
  VectorXd mean;
  MatrixXd covariance;
};

/// lambda_k R_k^-1. Zero when lambda_k = 0.
MatrixXd exploration_covariance(const PopulationSpec& spec, Eigen::Index k);

/// Mean from classical_control, covariance lambda_k R_k^-1.
GaussianAction exploratory_policy(double t, const VectorXd& x, const MeanFieldSolution& mf,
                                  const PopulationSpec& spec, Eigen::Index k);

VectorXd sample_action(const GaussianAction& a, Rng& rng);

/// Density of N(mean, cov) at u; cov must be positive definite.
double gaussian_density(const VectorXd& u, const VectorXd& mean, const MatrixXd& cov);

/// 1/2 ln det(2 pi e lambda R^-1). Throws InputError("entropy undefined (Dirac)") at lambda = 0.
double policy_entropy(Eigen::Index k, const PopulationSpec& spec);

/// m lambda / (2 rho): the discounted excess control cost of sampling.
double analytic_coe(Eigen::Index k, const PopulationSpec& spec);

/// (lambda / 2 rho)(ln det(2 pi lambda R^-1) - m).
double value_gap(Eigen::Index k, const PopulationSpec& spec);

/// Classical minus exploratory value assembled from the Gaussian identities:
/// -m lambda/(2 rho) from the action variance plus lambda H / rho from the
/// entropy, i.e. (lambda / 2 rho) ln det(2 pi lambda R^-1).
double value_gap_direct(Eigen::Index k, const PopulationSpec& spec);

/// lambda E int e^{-rho t} int Phi ln Phi du dt = -(lambda / rho) H(Phi).
double discounted_log_density_term(Eigen::Index k, const PopulationSpec& spec);

}  // namespace emfg
