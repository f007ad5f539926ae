#include "emfg/variational.hpp"

#include <cmath>
#include <numbers>

namespace emfg {

namespace {

using Index = Eigen::Index;

void check_action_dim(Index m) {
  if (m < 1 || m > 2) throw InputError("quadrature restricted to m <= 2");
}

// Per-axis node index of a flat index (first axis varies slowest).
std::vector<int> unflatten(const ActionBox& box, Index flat) {
  std::vector<int> idx(box.nodes.size());
  for (int d = static_cast<int>(box.nodes.size()) - 1; d >= 0; --d) {
    const auto nd = static_cast<Index>(box.nodes[static_cast<std::size_t>(d)]);
    idx[static_cast<std::size_t>(d)] = static_cast<int>(flat % nd);
    flat /= nd;
  }
  return idx;
}

bool same_nodes(const ActionBox& a, const ActionBox& b) {
  return a.nodes == b.nodes && a.lo == b.lo && a.hi == b.hi;
}

// Moments of a grid density normalized by its mass.
struct Moments {
  VectorXd mean;
  MatrixXd cov;
};

Moments moments(const GridDensity& phi) {
  const double mass = phi.mass();
  const VectorXd mean = phi.first_moment() / mass;
  const Index m = mean.size();
  MatrixXd cov = MatrixXd::Zero(m, m);
  const auto& box = phi.box();
  for (Index i = 0; i < box.size(); ++i) {
    const VectorXd d = box.point(i) - mean;
    cov += box.weight(i) * phi.values()(i) * d * d.transpose();
  }
  return {mean, cov / mass};
}

// Frozen mean-field forcing of type k: Fbar_k xbar(t) + Hbar_k mubar(t) + b_k(t).
VectorXd exogenous_drift(const MeanFieldSolution& mf, const PopulationSpec& spec, Index k, double t) {
  const auto& p = spec.subpops[static_cast<std::size_t>(k)];
  return spec.Fbar(k) * mf.xbar.smooth_at(t) + spec.Hbar(k) * mf.mubar.smooth_at(t) + p.b(t);
}

// Crank-Nicolson for x' = M x + g(t) on the grid, x(0) = x0.
std::vector<VectorXd> trapezoid_path(const MatrixXd& M, const std::function<VectorXd(int)>& g, const TimeGrid& grid,
                                     const VectorXd& x0) {
  const double h = grid.dt();
  const Index n = M.rows();
  const MatrixXd I = MatrixXd::Identity(n, n);
  const Eigen::PartialPivLU<MatrixXd> lhs(I - 0.5 * h * M);
  const MatrixXd rhs = I + 0.5 * h * M;
  std::vector<VectorXd> x{x0};
  VectorXd g_prev = g(0);
  for (int i = 0; i < grid.steps; ++i) {
    const VectorXd g_next = g(i + 1);
    x.push_back(lhs.solve(rhs * x.back() + 0.5 * h * (g_prev + g_next)));
    g_prev = g_next;
  }
  return x;
}

DensityPath closed_loop_densities(const MeanFieldSolution& mf, const PopulationSpec& spec, Index k,
                                  const TimeGrid& grid, const VectorXd& delta, double variance_factor,
                                  int nodes_per_dim) {
  const auto& p = spec.subpops.at(static_cast<std::size_t>(k));
  check_action_dim(p.m());
  if (!(p.lambda_explore > 0.0)) throw InputError("density path: lambda must be > 0");
  if (!(variance_factor > 0.0)) throw InputError("density path: variance factor must be > 0");
  if (delta.size() != p.m()) throw InputError("density path: shift has wrong dimension");
  const ControlLaw law(spec, mf, k);
  const auto x = trapezoid_path(
      p.A + p.B * law.gain(),
      [&](int i) {
        const double t = grid.at(i);
        return VectorXd(p.B * (law.offset(t) + delta) + exogenous_drift(mf, spec, k, t));
      },
      grid, spec.x0_mean);
  const MatrixXd cov = variance_factor * exploration_covariance(spec, k);
  DensityPath out;
  out.grid = grid;
  for (int i = 0; i < grid.size(); ++i)
    out.densities.push_back(
        GridDensity::gaussian(law(grid.at(i), x[static_cast<std::size_t>(i)]) + delta, cov, nodes_per_dim));
  return out;
}

}  // namespace

Index ActionBox::size() const {
  Index s = 1;
  for (int n : nodes) s *= n;
  return s;
}

VectorXd ActionBox::point(Index flat) const {
  const auto idx = unflatten(*this, flat);
  VectorXd u(dim());
  for (Index d = 0; d < dim(); ++d) {
    const int nd = nodes[static_cast<std::size_t>(d)];
    u(d) = lo(d) + (hi(d) - lo(d)) * idx[static_cast<std::size_t>(d)] / (nd - 1);
  }
  return u;
}

double ActionBox::weight(Index flat) const {
  const auto idx = unflatten(*this, flat);
  double w = 1.0;
  for (Index d = 0; d < dim(); ++d) {
    const int nd = nodes[static_cast<std::size_t>(d)];
    const int i = idx[static_cast<std::size_t>(d)];
    w *= (hi(d) - lo(d)) / (nd - 1) * ((i == 0 || i == nd - 1) ? 0.5 : 1.0);
  }
  return w;
}

GridDensity::GridDensity(ActionBox box, VectorXd values, bool normalized)
    : box_(std::move(box)), values_(std::move(values)), normalized_(normalized) {
  check_action_dim(box_.dim());
  if (box_.hi.size() != box_.dim() || static_cast<Index>(box_.nodes.size()) != box_.dim())
    throw InputError("grid density: box dimensions disagree");
  for (Index d = 0; d < box_.dim(); ++d)
    if (box_.nodes[static_cast<std::size_t>(d)] < 2 || !(box_.hi(d) > box_.lo(d)))
      throw InputError("grid density: need >= 2 nodes and hi > lo on every axis");
  if (values_.size() != box_.size()) throw InputError("grid density: value count does not match the box");
  if (!values_.allFinite() || values_.minCoeff() < 0.0) throw InputError("grid density: values must be finite and >= 0");
  if (normalized_ && std::abs(mass() - 1.0) > 1e-8) throw InputError("grid density: flagged normalized but mass != 1");
}

GridDensity GridDensity::gaussian(const VectorXd& mean, const MatrixXd& cov, int nodes_per_dim, double width) {
  check_action_dim(mean.size());
  ActionBox box;
  box.lo = box.hi = mean;
  box.nodes.assign(static_cast<std::size_t>(mean.size()), nodes_per_dim);
  for (Index d = 0; d < mean.size(); ++d) {
    const double sd = std::sqrt(cov(d, d));
    if (!(sd > 0.0)) throw InputError("grid density: degenerate covariance");
    box.lo(d) -= width * sd;
    box.hi(d) += width * sd;
  }
  VectorXd v(box.size());
  for (Index i = 0; i < box.size(); ++i) v(i) = gaussian_density(box.point(i), mean, cov);
  GridDensity g(box, v, false);
  g.values_ /= g.mass();  // removes the O(1e-15) tail and trapezoid error
  g.normalized_ = true;
  return g;
}

double GridDensity::integrate(const std::function<double(const VectorXd&)>& f) const {
  double total = 0.0;
  for (Index i = 0; i < values_.size(); ++i)
    if (values_(i) != 0.0) total += box_.weight(i) * values_(i) * f(box_.point(i));
  return total;
}

double GridDensity::mass() const {
  double total = 0.0;
  for (Index i = 0; i < values_.size(); ++i) total += box_.weight(i) * values_(i);
  return total;
}

VectorXd GridDensity::first_moment() const {
  VectorXd total = VectorXd::Zero(box_.dim());
  for (Index i = 0; i < values_.size(); ++i) total += box_.weight(i) * values_(i) * box_.point(i);
  return total;
}

double GridDensity::neg_entropy() const {
  double total = 0.0;
  for (Index i = 0; i < values_.size(); ++i)
    if (values_(i) > 0.0) total += box_.weight(i) * values_(i) * std::log(values_(i));
  return total;
}

GridDensity perturb_density(const GridDensity& phi, const GridFunction& omega, double eps) {
  if (!same_nodes(phi.box(), omega.box)) throw InputError("perturbation: direction lives on a different grid");
  const VectorXd v = phi.values().array() * (eps * omega.values.array()).exp();
  if (!v.allFinite()) throw NumericalError("perturbation overflow");
  return GridDensity(phi.box(), v, false);
}

DensityPath perturb_path(const DensityPath& phi, const DirectionPath& omega, double eps) {
  if (phi.densities.size() != omega.directions.size()) throw InputError("perturbation: path lengths differ");
  DensityPath out;
  out.grid = phi.grid;
  for (std::size_t i = 0; i < phi.densities.size(); ++i)
    out.densities.push_back(perturb_density(phi.densities[i], omega.directions[i], eps));
  return out;
}

Trajectory mean_state_path(const DensityPath& path, const MeanFieldSolution& mf, const PopulationSpec& spec,
                           Index k) {
  const auto& p = spec.subpops.at(static_cast<std::size_t>(k));
  if (static_cast<int>(path.densities.size()) != path.grid.size()) throw InputError("density path: one density per node");
  Trajectory out;
  out.grid = path.grid;
  out.values = trapezoid_path(
      p.A,
      [&](int i) {
        const VectorXd u = path.densities[static_cast<std::size_t>(i)].first_moment();
        return VectorXd(p.B * u + exogenous_drift(mf, spec, k, path.grid.at(i)));
      },
      path.grid, spec.x0_mean);
  return out;
}

DensityPath optimal_density_path(const MeanFieldSolution& mf, const PopulationSpec& spec, Index k,
                                 const TimeGrid& grid, int nodes_per_dim) {
  return closed_loop_densities(mf, spec, k, grid, VectorXd::Zero(spec.m()), 1.0, nodes_per_dim);
}

DensityPath shifted_density_path(const MeanFieldSolution& mf, const PopulationSpec& spec, Index k,
                                 const TimeGrid& grid, const VectorXd& delta, double variance_factor,
                                 int nodes_per_dim) {
  return closed_loop_densities(mf, spec, k, grid, delta, variance_factor, nodes_per_dim);
}

ExploratoryCost exploratory_cost_quadrature(const DensityPath& path, const MeanFieldSolution& mf,
                                            const PopulationSpec& spec, Index k) {
  const auto& p = spec.subpops.at(static_cast<std::size_t>(k));
  check_action_dim(p.m());
  const auto x = mean_state_path(path, mf, spec, k);
  const MatrixXd psibar = spec.psibar(k);
  const double h = path.grid.dt();
  ExploratoryCost c;
  for (int i = 0; i < path.grid.size(); ++i) {
    const double t = path.grid.at(i);
    const auto& phi = path.densities[static_cast<std::size_t>(i)];
    const VectorXd dx = x.node(i) - psibar * mf.xbar.smooth_at(t);
    const double mass = phi.mass();
    const double control = (p.S.transpose() * dx + p.nvec).dot(phi.first_moment()) +
                           phi.integrate([&](const VectorXd& u) { return 0.5 * u.dot(p.R * u); });
    const double entropy = p.lambda_explore * phi.neg_entropy();
    const double lagrange = p.phi_lagrange * (mass - 1.0);
    const double state = 0.5 * dx.dot(p.Q * dx) + p.eta.dot(dx);
    const double w = std::exp(-spec.rho * t) * h * ((i == 0 || i == path.grid.steps) ? 0.5 : 1.0);
    c.running += w * (state + control + entropy + lagrange);
    c.entropy += w * entropy;
    c.lagrange += w * lagrange;
  }
  const double T = path.grid.t1;
  const VectorXd& xT = x.values.back();
  const MatrixXd& Pi = mf.Pi[static_cast<std::size_t>(k)].Pi;
  c.terminal = std::exp(-spec.rho * T) * (0.5 * xT.dot(Pi * xT) + mf.s[static_cast<std::size_t>(k)].smooth_at(T).dot(xT));
  c.total = c.running + c.terminal;
  return c;
}

double gateaux_derivative(const DensityPath& phi, const DirectionPath& omega, const MeanFieldSolution& mf,
                          const PopulationSpec& spec, Index k, double eps) {
  if (!(eps > 0.0)) throw InputError("gateaux derivative: eps must be > 0");
  const double up = exploratory_cost_quadrature(perturb_path(phi, omega, eps), mf, spec, k).total;
  const double down = exploratory_cost_quadrature(perturb_path(phi, omega, -eps), mf, spec, k).total;
  return (up - down) / (2.0 * eps);
}

DirectionPath project_admissible(const DensityPath& phi, const DirectionPath& omega) {
  if (phi.densities.size() != omega.directions.size()) throw InputError("projection: path lengths differ");
  DirectionPath out = omega;
  for (std::size_t i = 0; i < phi.densities.size(); ++i) {
    const auto& d = phi.densities[i];
    auto& w = out.directions[i];
    if (!same_nodes(d.box(), w.box)) throw InputError("projection: direction lives on a different grid");
    double weighted = 0.0;
    for (Index j = 0; j < w.values.size(); ++j) weighted += d.box().weight(j) * d.values()(j) * w.values(j);
    w.values.array() -= weighted / d.mass();
  }
  return out;
}

DirectionPath random_direction(const DensityPath& phi, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const Index m = phi.densities.front().box().dim();
  constexpr int kOrders = 4;
  // a_{j,d}(t) = c0 + c1 sin(2 pi f t / T + c2)
  MatrixXd c0(kOrders, m), c1(kOrders, m), c2(kOrders, m), f(kOrders, m);
  for (int j = 0; j < kOrders; ++j)
    for (Index d = 0; d < m; ++d) {
      c0(j, d) = nd(rng);
      c1(j, d) = nd(rng);
      c2(j, d) = nd(rng);
      f(j, d) = 1.0 + std::abs(nd(rng));
    }
  const double T = phi.grid.t1 - phi.grid.t0;
  DirectionPath out;
  out.grid = phi.grid;
  for (int i = 0; i < phi.grid.size(); ++i) {
    const auto& d = phi.densities[static_cast<std::size_t>(i)];
    const auto mom = moments(d);
    const double t = phi.grid.at(i) - phi.grid.t0;
    GridFunction w{d.box(), VectorXd(d.box().size())};
    for (Index q = 0; q < w.values.size(); ++q) {
      const VectorXd u = d.box().point(q);
      VectorXd z(m);
      for (Index a = 0; a < m; ++a) z(a) = (u(a) - mom.mean(a)) / std::sqrt(mom.cov(a, a));
      const double envelope = std::exp(-0.25 * z.squaredNorm());
      double v = 0.0;
      for (int j = 0; j < kOrders; ++j)
        for (Index a = 0; a < m; ++a)
          v += (c0(j, a) + c1(j, a) * std::sin(2 * std::numbers::pi * f(j, a) * t / T + c2(j, a))) *
               std::pow(z(a), j);
      w.values(q) = v * envelope;
    }
    out.directions.push_back(std::move(w));
  }
  return out;
}

DirectionPath mean_shift_direction(const DensityPath& phi, const VectorXd& delta) {
  DirectionPath out;
  out.grid = phi.grid;
  for (const auto& d : phi.densities) {
    if (delta.size() != d.box().dim()) throw InputError("mean shift direction: delta has wrong dimension");
    const VectorXd mean = d.first_moment() / d.mass();
    GridFunction w{d.box(), VectorXd(d.box().size())};
    for (Index q = 0; q < w.values.size(); ++q) w.values(q) = -delta.dot(d.box().point(q) - mean);
    out.directions.push_back(std::move(w));
  }
  return out;
}

}  // namespace emfg
