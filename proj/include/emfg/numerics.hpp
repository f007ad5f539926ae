#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "emfg/model.hpp"

namespace emfg {

/// Uniform grid t_i = t0 + i*dt, i = 0..steps.
struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double t0_, double t1_, int steps_);

  double dt() const { return (t1 - t0) / steps; }
  double at(int i) const { return t0 + i * dt(); }
  int size() const { return steps + 1; }
  bool contains(double t) const;
};

/// Vector-valued samples on a grid. When derivatives are present, evaluation
/// between nodes is cubic Hermite; otherwise linear.
struct Trajectory {
  TimeGrid grid;
  std::vector<VectorXd> values;
  std::vector<VectorXd> derivs;

  /// Linear interpolation; throws InputError outside the grid.
  VectorXd at(double t) const;
  /// Cubic Hermite when derivs is filled, linear otherwise.
  VectorXd smooth_at(double t) const;
  const VectorXd& node(int i) const { return values[static_cast<std::size_t>(i)]; }
};

struct MatrixTrajectory {
  TimeGrid grid;
  std::vector<MatrixXd> values;

  MatrixXd at(double t) const;
  const MatrixXd& node(int i) const { return values[static_cast<std::size_t>(i)]; }
};

enum class Direction { kForward, kBackward };

using OdeRhs = std::function<VectorXd(double, const VectorXd&)>;
using MatrixOdeRhs = std::function<MatrixXd(double, const MatrixXd&)>;

/// Classical fixed-step RK4. Backward integration starts from y0 at t1 and
/// fills the grid down to t0; values[i] always corresponds to grid.at(i).
/// Throws NumericalError on a non-finite intermediate value.
Trajectory integrate_ode(const OdeRhs& rhs, const VectorXd& y0, const TimeGrid& grid,
                         Direction direction);

MatrixTrajectory integrate_matrix_ode(const MatrixOdeRhs& rhs, const MatrixXd& y0,
                                      const TimeGrid& grid, Direction direction);

/// One RK4 step of size h (negative h integrates backward).
VectorXd rk4_step(const OdeRhs& rhs, double t, const VectorXd& y, double h);

/// max Re(eig(M)).
double spectral_abscissa(const MatrixXd& M);

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream index (splitmix64 finaliser).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// One generator per agent: seeded with seed XOR agent index.
inline Rng agent_stream(std::uint64_t seed, std::uint64_t agent) { return Rng(seed ^ agent); }

/// Draws from N(mean, cov) for a fixed PSD covariance. The factor is computed
/// once with a pivoted LDL^T; small negative pivots are absorbed by diagonal
/// jitter up to 1e-12 * trace before the covariance is rejected.
class GaussianSampler {
 public:
  explicit GaussianSampler(const MatrixXd& cov);

  /// mean + M z with M M^T = cov, z standard normal from rng.
  VectorXd sample(const VectorXd& mean, Rng& rng) const;
  /// Noise part only, M z, written into out.
  void sample_noise(Rng& rng, Eigen::Ref<VectorXd> out) const;

  const MatrixXd& factor() const { return factor_; }
  bool degenerate() const { return zero_; }

 private:
  MatrixXd factor_;
  bool zero_ = false;
};

VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, Rng& rng);

/// OLS slope of log(ys) against log(xs). Needs >= 3 points and ys > 0.
double fit_rate(std::span<const double> xs, std::span<const double> ys);

}  // namespace emfg
