#pragma once

#include <functional>
#include <vector>

#include "emfg/policy.hpp"

namespace emfg {

/// Tensor grid on a box in action space (m <= 2).
struct ActionBox {
  VectorXd lo;
  VectorXd hi;
  std::vector<int> nodes;  // per dimension, >= 2

  Eigen::Index dim() const { return lo.size(); }
  Eigen::Index size() const;
  VectorXd point(Eigen::Index flat) const;
  /// Tensor-product trapezoid weight of a node.
  double weight(Eigen::Index flat) const;
};

/// Nonnegative weights at the box nodes.
class GridDensity {
 public:
  GridDensity(ActionBox box, VectorXd values, bool normalized);

  /// N(mean, cov) sampled on a box of +-width standard deviations per axis.
  static GridDensity gaussian(const VectorXd& mean, const MatrixXd& cov, int nodes_per_dim = 401,
                              double width = 8.0);

  const ActionBox& box() const { return box_; }
  const VectorXd& values() const { return values_; }
  bool normalized() const { return normalized_; }

  /// Trapezoid rule for int f(u) Phi(u) du.
  double integrate(const std::function<double(const VectorXd&)>& f) const;
  double mass() const;
  /// int u Phi(u) du (not divided by the mass).
  VectorXd first_moment() const;
  /// int Phi ln Phi du, with 0 ln 0 = 0.
  double neg_entropy() const;

 private:
  ActionBox box_;
  VectorXd values_;
  bool normalized_;
};

/// A real function on the same nodes as a density.
struct GridFunction {
  ActionBox box;
  VectorXd values;
};

/// One density per node of a time grid.
struct DensityPath {
  TimeGrid grid;
  std::vector<GridDensity> densities;
};

struct DirectionPath {
  TimeGrid grid;
  std::vector<GridFunction> directions;
};

/// e^{eps omega(u)} phi(u) pointwise; the normalized flag is cleared.
GridDensity perturb_density(const GridDensity& phi, const GridFunction& omega, double eps);
DensityPath perturb_path(const DensityPath& phi, const DirectionPath& omega, double eps);

/// Mean state of a representative agent of type k whose action density is
/// the given open-loop path, with the mean field frozen at the solution.
/// Trapezoid (Crank-Nicolson) in time from x(0) = xi.
Trajectory mean_state_path(const DensityPath& path, const MeanFieldSolution& mf, const PopulationSpec& spec,
                           Eigen::Index k);

/// The optimal Gaussian densities along the closed-loop mean path on [0, T].
DensityPath optimal_density_path(const MeanFieldSolution& mf, const PopulationSpec& spec, Eigen::Index k,
                                 const TimeGrid& grid, int nodes_per_dim = 401);

/// Same as optimal_density_path with the action mean shifted by delta and
/// the covariance scaled by variance_factor, along the path it generates.
DensityPath shifted_density_path(const MeanFieldSolution& mf, const PopulationSpec& spec, Eigen::Index k,
                                 const TimeGrid& grid, const VectorXd& delta, double variance_factor,
                                 int nodes_per_dim = 401);

struct ExploratoryCost {
  double total = 0.0;
  double running = 0.0;   // discounted integral of the full integrand
  double terminal = 0.0;  // e^{-rho T} (1/2 x^T Pi x + s(T)^T x)
  double entropy = 0.0;   // discounted lambda int Phi ln Phi part of running
  double lagrange = 0.0;  // discounted phi (int Phi - 1) part of running
};

/// Discounted regularized cost of a density path along its mean state path,
/// trapezoid in t and in u. The value function's quadratic and linear parts
/// close the truncated horizon, so the optimal path is optimal on [0, T].
/// The state-covariance term is omitted: for open-loop densities it does
/// not depend on the densities. Throws InputError for m > 2.
ExploratoryCost exploratory_cost_quadrature(const DensityPath& path, const MeanFieldSolution& mf,
                                            const PopulationSpec& spec, Eigen::Index k);

/// Central difference [J(phi^{+eps}) - J(phi^{-eps})] / (2 eps).
double gateaux_derivative(const DensityPath& phi, const DirectionPath& omega, const MeanFieldSolution& mf,
                          const PopulationSpec& spec, Eigen::Index k, double eps);

/// Removes from each omega_t its phi_t-weighted mean so int phi_t omega_t du = 0.
DirectionPath project_admissible(const DensityPath& phi, const DirectionPath& omega);

/// Smooth random direction: a random combination of low-order Hermite-like
/// bumps in the standardized action, varying smoothly in time.
DirectionPath random_direction(const DensityPath& phi, Rng& rng);

/// omega_t(u) = -delta^T (u - mean_t): to first order in eps, moves every
/// density mean by -eps Cov_t delta.
DirectionPath mean_shift_direction(const DensityPath& phi, const VectorXd& delta);

}  // namespace emfg
