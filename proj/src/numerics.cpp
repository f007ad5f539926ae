#include "emfg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace emfg {

TimeGrid::TimeGrid(double t0_, double t1_, int steps_) : t0(t0_), t1(t1_), steps(steps_) {
  if (!(t1 > t0) || steps < 1) throw InputError("time grid: need t1 > t0 and steps >= 1");
}

bool TimeGrid::contains(double t) const {
  const double slack = 1e-9 * (1.0 + std::abs(t1 - t0));
  return t >= t0 - slack && t <= t1 + slack;
}

namespace {

// Locates t in the grid: returns index i and fraction w in [0,1] of [t_i, t_{i+1}].
std::pair<int, double> locate(const TimeGrid& g, double t) {
  if (!g.contains(t)) {
    std::ostringstream os;
    os << "time " << t << " outside grid [" << g.t0 << ", " << g.t1 << "]";
    throw InputError(os.str());
  }
  double u = (t - g.t0) / g.dt();
  int i = static_cast<int>(std::floor(u));
  i = std::clamp(i, 0, g.steps - 1);
  double w = std::clamp(u - i, 0.0, 1.0);
  return {i, w};
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

[[noreturn]] void blow_up(double t) {
  std::ostringstream os;
  os << "ODE blow-up at t=" << t;
  throw NumericalError(os.str());
}

}  // namespace

VectorXd Trajectory::at(double t) const {
  auto [i, w] = locate(grid, t);
  if (w == 0.0) return node(i);
  return (1.0 - w) * node(i) + w * node(i + 1);
}

VectorXd Trajectory::smooth_at(double t) const {
  if (derivs.size() != values.size()) return at(t);
  auto [i, w] = locate(grid, t);
  if (w == 0.0) return node(i);
  const double h = grid.dt();
  const double w2 = w * w;
  const double w3 = w2 * w;
  const double h00 = 2 * w3 - 3 * w2 + 1;
  const double h10 = w3 - 2 * w2 + w;
  const double h01 = -2 * w3 + 3 * w2;
  const double h11 = w3 - w2;
  const auto iu = static_cast<std::size_t>(i);
  return h00 * values[iu] + h10 * h * derivs[iu] + h01 * values[iu + 1] + h11 * h * derivs[iu + 1];
}

MatrixXd MatrixTrajectory::at(double t) const {
  auto [i, w] = locate(grid, t);
  if (w == 0.0) return node(i);
  return (1.0 - w) * node(i) + w * node(i + 1);
}

VectorXd rk4_step(const OdeRhs& rhs, double t, const VectorXd& y, double h) {
  const VectorXd k1 = rhs(t, y);
  const VectorXd k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
  const VectorXd k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
  const VectorXd k4 = rhs(t + h, y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory integrate_ode(const OdeRhs& rhs, const VectorXd& y0, const TimeGrid& grid,
                         Direction direction) {
  Trajectory out;
  out.grid = grid;
  out.values.resize(static_cast<std::size_t>(grid.size()));
  const double h = grid.dt();
  if (direction == Direction::kForward) {
    out.values[0] = y0;
    for (int i = 0; i < grid.steps; ++i) {
      VectorXd next = rk4_step(rhs, grid.at(i), out.node(i), h);
      if (!all_finite(next)) blow_up(grid.at(i + 1));
      out.values[static_cast<std::size_t>(i + 1)] = std::move(next);
    }
  } else {
    out.values.back() = y0;
    for (int i = grid.steps; i > 0; --i) {
      VectorXd next = rk4_step(rhs, grid.at(i), out.node(i), -h);
      if (!all_finite(next)) blow_up(grid.at(i - 1));
      out.values[static_cast<std::size_t>(i - 1)] = std::move(next);
    }
  }
  return out;
}

MatrixTrajectory integrate_matrix_ode(const MatrixOdeRhs& rhs, const MatrixXd& y0,
                                      const TimeGrid& grid, Direction direction) {
  const auto r = y0.rows();
  const auto c = y0.cols();
  OdeRhs flat = [&](double t, const VectorXd& y) -> VectorXd {
    MatrixXd M = Eigen::Map<const MatrixXd>(y.data(), r, c);
    MatrixXd d = rhs(t, M);
    return Eigen::Map<const VectorXd>(d.data(), d.size());
  };
  VectorXd y0v = Eigen::Map<const VectorXd>(y0.data(), y0.size());
  Trajectory tr = integrate_ode(flat, y0v, grid, direction);
  MatrixTrajectory out;
  out.grid = grid;
  out.values.reserve(tr.values.size());
  for (const auto& v : tr.values) out.values.emplace_back(Eigen::Map<const MatrixXd>(v.data(), r, c));
  return out;
}

double spectral_abscissa(const MatrixXd& M) {
  if (M.rows() != M.cols() || M.size() == 0) throw InputError("spectral_abscissa: need a square matrix");
  Eigen::EigenSolver<MatrixXd> es(M, false);
  if (es.info() != Eigen::Success) throw NumericalError("spectral_abscissa: eigen-solver failed");
  return es.eigenvalues().real().maxCoeff();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

GaussianSampler::GaussianSampler(const MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw InputError("gaussian: covariance must be square");
  if (!is_symmetric(cov)) throw InputError("gaussian: covariance not symmetric");
  const auto d = cov.rows();
  const double trace = cov.trace();
  if (cov.isZero(0.0)) {
    factor_ = MatrixXd::Zero(d, d);
    zero_ = true;
    return;
  }
  const double floor = psd_floor(cov);
  for (double jitter : {0.0, 1e-12 * std::max(trace, 0.0)}) {
    MatrixXd C = cov + jitter * MatrixXd::Identity(d, d);
    Eigen::LDLT<MatrixXd> ldlt(C);
    if (ldlt.info() != Eigen::Success) continue;
    VectorXd D = ldlt.vectorD();
    if (D.minCoeff() < floor) continue;
    D = D.cwiseMax(0.0);
    MatrixXd L = ldlt.matrixL();
    // C = P^T L D L^T P
    MatrixXd M = ldlt.transpositionsP().transpose() * (L * D.cwiseSqrt().asDiagonal());
    factor_ = M;
    return;
  }
  throw InputError("gaussian: covariance is not positive semidefinite");
}

void GaussianSampler::sample_noise(Rng& rng, Eigen::Ref<VectorXd> out) const {
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd z(factor_.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(rng);
  if (zero_) {
    out.setZero();
    return;
  }
  out = factor_ * z;
}

VectorXd GaussianSampler::sample(const VectorXd& mean, Rng& rng) const {
  VectorXd noise(factor_.rows());
  sample_noise(rng, noise);
  if (zero_) return mean;
  return mean + noise;
}

VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, Rng& rng) {
  if (mean.size() != cov.rows()) throw InputError("gaussian: mean/covariance dimension mismatch");
  return GaussianSampler(cov).sample(mean, rng);
}

double fit_rate(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InputError("fit_rate: xs and ys differ in length");
  if (xs.size() < 3) throw InputError("fit_rate: need at least 3 points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0) || !(ys[i] > 0)) throw InputError("fit_rate: values must be positive");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
    mx += lx.back();
    my += ly.back();
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0) throw InputError("fit_rate: xs are all equal");
  return sxy / sxx;
}

}  // namespace emfg
