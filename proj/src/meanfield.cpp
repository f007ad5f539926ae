#include "emfg/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace emfg {

namespace {

using Index = Eigen::Index;

// Pieces of the offset equation for one type at one instant:
//   ds/dt = rho s - drift s - from_x xbar - from_mu mubar - Pi b(t) + constant.
struct OffsetTerms {
  MatrixXd Pi;
  MatrixXd drift;     // A^T - S R^-1 B^T - Pi B R^-1 B^T
  MatrixXd from_x;    // Pi (Fbar + B R^-1 S^T psibar) + (S R^-1 S^T - Q) psibar
  MatrixXd from_mu;   // Pi Hbar
  VectorXd constant;  // Pi B R^-1 n + S R^-1 n - eta
};

struct Gains {
  MatrixXd J;
  MatrixXd Abar;
  std::vector<OffsetTerms> types;
};

Gains make_gains(const PopulationSpec& spec, const std::vector<MatrixXd>& Pis) {
  Gains g;
  g.J = feedback_gain_matrix(spec, Pis);
  g.Abar = aggregate_drift_matrix(spec, Pis, g.J);
  for (Index k = 0; k < spec.K(); ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const MatrixXd& Pi = Pis[static_cast<std::size_t>(k)];
    const auto R = p.R.ldlt();
    const MatrixXd RinvBt = R.solve(p.B.transpose());
    const MatrixXd RinvSt = R.solve(p.S.transpose());
    const VectorXd Rinvn = R.solve(p.nvec);
    const MatrixXd psibar = spec.psibar(k);
    OffsetTerms t;
    t.Pi = Pi;
    t.drift = p.A.transpose() - p.S * RinvBt - Pi * p.B * RinvBt;
    t.from_x = Pi * (spec.Fbar(k) + p.B * RinvSt * psibar) + (p.S * RinvSt - p.Q) * psibar;
    t.from_mu = Pi * spec.Hbar(k);
    t.constant = Pi * p.B * Rinvn + p.S * Rinvn - p.eta;
    g.types.push_back(std::move(t));
  }
  return g;
}

VectorXd stacked_initial_mean(const PopulationSpec& spec) {
  return spec.x0_mean.replicate(spec.K(), 1);
}

std::vector<VectorXd> split(const VectorXd& stacked, Index K, Index n) {
  std::vector<VectorXd> out;
  for (Index k = 0; k < K; ++k) out.emplace_back(stacked.segment(k * n, n));
  return out;
}

Trajectory constant_path(const TimeGrid& grid, const VectorXd& v) {
  Trajectory tr;
  tr.grid = grid;
  tr.values.assign(static_cast<std::size_t>(grid.size()), v);
  tr.derivs.assign(static_cast<std::size_t>(grid.size()), VectorXd::Zero(v.size()));
  return tr;
}

Trajectory blend(const Trajectory& a, const Trajectory& b, double weight_b) {
  Trajectory out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (1.0 - weight_b) * a.values[i] + weight_b * b.values[i];
    out.derivs[i] = (1.0 - weight_b) * a.derivs[i] + weight_b * b.derivs[i];
  }
  return out;
}

double sup_distance(const Trajectory& a, const Trajectory& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    d = std::max(d, (a.values[i] - b.values[i]).lpNorm<Eigen::Infinity>());
  return d;
}

[[noreturn]] void diverged(const std::string& why) {
  throw NumericalError("consistency iteration diverged: " + why);
}

// One application of the consistency map: given (xbar, mubar) on the grid,
// integrate the offsets backward, rebuild L and mbar, integrate xbar forward
// and set mubar = J xbar + L. Gains live on the half-step grid so that RK4
// stage times hit stored values; a single entry means time-invariant gains.
class ConsistencyMap {
 public:
  struct Image {
    Trajectory s;  // stacked nK
    Trajectory L;
    Trajectory mbar;
    Trajectory xbar;
    Trajectory mubar;
  };

  ConsistencyMap(const PopulationSpec& spec, TimeGrid grid, std::vector<Gains> gains,
                 VectorXd s_terminal)
      : spec_(spec), grid_(grid), gains_(std::move(gains)), s_T_(std::move(s_terminal)) {}

  bool is_constant() const {
    for (const auto& g : gains_)
      for (const auto& t : g.types)
        if (!t.from_x.isZero(0.0) || !t.from_mu.isZero(0.0)) return false;
    return true;
  }

  const Gains& gains_at(double t) const {
    if (gains_.size() == 1) return gains_.front();
    const auto idx = std::lround(2.0 * (t - grid_.t0) / grid_.dt());
    return gains_[static_cast<std::size_t>(std::clamp<long>(idx, 0, static_cast<long>(gains_.size()) - 1))];
  }

  Image operator()(const Trajectory& xbar, const Trajectory& mubar) const {
    const Index K = spec_.K();
    const Index n = spec_.n();
    const double rho = spec_.rho;
    Image img;

    OdeRhs offset_rhs = [&](double t, const VectorXd& s) -> VectorXd {
      const Gains& g = gains_at(t);
      const VectorXd x = xbar.smooth_at(t);
      const VectorXd mu = mubar.smooth_at(t);
      VectorXd ds(n * K);
      for (Index k = 0; k < K; ++k) {
        const auto& tt = g.types[static_cast<std::size_t>(k)];
        const auto& p = spec_.subpops[static_cast<std::size_t>(k)];
        const auto sk = s.segment(k * n, n);
        ds.segment(k * n, n) = rho * sk - tt.drift * sk - tt.from_x * x - tt.from_mu * mu -
                               tt.Pi * p.b(t) + tt.constant;
      }
      return ds;
    };
    img.s = integrate_ode(offset_rhs, s_T_, grid_, Direction::kBackward);
    fill_derivs(img.s, offset_rhs);

    auto L_of = [&](double t) { return feedforward(spec_, split(img.s.smooth_at(t), K, n)); };
    auto mbar_of = [&](double t) {
      const auto s = split(img.s.smooth_at(t), K, n);
      return aggregate_offset(spec_, s, feedforward(spec_, s), t);
    };

    OdeRhs mean_rhs = [&](double t, const VectorXd& x) -> VectorXd {
      return gains_at(t).Abar * x + mbar_of(t);
    };
    img.xbar = integrate_ode(mean_rhs, stacked_initial_mean(spec_), grid_, Direction::kForward);
    fill_derivs(img.xbar, mean_rhs);

    const auto N = static_cast<std::size_t>(grid_.size());
    img.L.grid = img.mbar.grid = img.mubar.grid = grid_;
    for (std::size_t i = 0; i < N; ++i) {
      const double t = grid_.at(static_cast<int>(i));
      const Gains& g = gains_at(t);
      img.L.values.push_back(L_of(t));
      img.mbar.values.push_back(mbar_of(t));
      img.mubar.values.push_back(g.J * img.xbar.values[i] + img.L.values[i]);

      // dL/dt = -R^-1 B^T ds/dt per block.
      VectorXd dL(img.L.values[i].size());
      Index row = 0;
      for (Index k = 0; k < K; ++k) {
        const auto& p = spec_.subpops[static_cast<std::size_t>(k)];
        const Index m = p.m();
        dL.segment(row, m) = -p.R.ldlt().solve(p.B.transpose() * img.s.derivs[i].segment(k * n, n));
        row += m;
      }
      img.L.derivs.push_back(dL);
      img.mubar.derivs.push_back(g.J * img.xbar.derivs[i] + gain_rate(t) * img.xbar.values[i] + dL);
    }
    return img;
  }

 private:
  static void fill_derivs(Trajectory& tr, const OdeRhs& rhs) {
    tr.derivs.clear();
    for (int i = 0; i < tr.grid.size(); ++i) tr.derivs.push_back(rhs(tr.grid.at(i), tr.node(i)));
  }

  // dJ/dt by central differences on the half grid (zero for constant gains).
  MatrixXd gain_rate(double t) const {
    const auto& J0 = gains_.front().J;
    if (gains_.size() == 1) return MatrixXd::Zero(J0.rows(), J0.cols());
    const double hh = 0.5 * grid_.dt();
    const double lo = std::max(t - hh, grid_.t0);
    const double hi = std::min(t + hh, grid_.t1);
    return (gains_at(hi).J - gains_at(lo).J) / (hi - lo);
  }

  const PopulationSpec& spec_;
  TimeGrid grid_;
  std::vector<Gains> gains_;
  VectorXd s_T_;
};

struct PicardResult {
  ConsistencyMap::Image image;
  int iterations = 0;
  double residual = 0.0;
};

PicardResult run_picard(const ConsistencyMap& map, Trajectory xbar, Trajectory mubar,
                        const SolverConfig& cfg) {
  if (!(cfg.tol > 0.0)) throw InputError("solver: tol must be > 0");
  if (!(cfg.damping > 0.0 && cfg.damping <= 1.0)) throw InputError("solver: damping must be in (0, 1]");
  PicardResult out;
  try {
    if (map.is_constant()) {
      // The offsets do not see the mean field, so the first image is the fixed point.
      out.image = map(xbar, mubar);
      out.iterations = 1;
    } else {
      for (int it = 1;; ++it) {
        auto img = map(xbar, mubar);
        const double change = std::max(sup_distance(img.xbar, xbar), sup_distance(img.mubar, mubar));
        if (!std::isfinite(change) || change > 1e100) diverged("iterates blew up");
        if (change < cfg.tol) {
          out.image = std::move(img);
          out.iterations = it;
          break;
        }
        if (it >= cfg.max_iters) {
          std::ostringstream os;
          os << "no convergence after " << it << " iterations (last change " << change << ")";
          diverged(os.str());
        }
        xbar = blend(xbar, img.xbar, cfg.damping);
        mubar = blend(mubar, img.mubar, cfg.damping);
      }
    }
    const auto again = map(out.image.xbar, out.image.mubar);
    out.residual = std::max(sup_distance(again.xbar, out.image.xbar),
                            sup_distance(again.mubar, out.image.mubar));
  } catch (const NumericalError& e) {
    if (std::string(e.what()).rfind("consistency iteration diverged", 0) == 0) throw;
    diverged(e.what());
  }
  return out;
}

void require_valid(const PopulationSpec& spec) {
  const auto report = validate_spec(spec);
  if (report.ok) return;
  std::ostringstream os;
  os << "invalid spec:";
  for (const auto& v : report.violations) os << " [" << v.assumption << "] " << v.message << ";";
  throw InputError(os.str());
}

std::vector<MatrixXd> matrices(const std::vector<RiccatiSolution>& sols) {
  std::vector<MatrixXd> out;
  for (const auto& s : sols) out.push_back(s.Pi);
  return out;
}

std::vector<Trajectory> split_path(const Trajectory& stacked, Index K, Index n) {
  std::vector<Trajectory> out(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    auto& tr = out[static_cast<std::size_t>(k)];
    tr.grid = stacked.grid;
    for (const auto& v : stacked.values) tr.values.emplace_back(v.segment(k * n, n));
    for (const auto& v : stacked.derivs) tr.derivs.emplace_back(v.segment(k * n, n));
  }
  return out;
}

// Horizon long enough for e^{-rho T} and the slowest mean mode to fall below
// 1e-8; step about 0.02 but at most 0.2 / (fastest rate).
TimeGrid default_grid(const PopulationSpec& spec, const Gains& g, const SolverConfig& cfg) {
  const double decay = std::log(1e8);
  double T = cfg.horizon;
  if (T <= 0.0) {
    const double a = spectral_abscissa(g.Abar);
    const double rate = a < 0.0 ? std::min(spec.rho, -a) : std::max(0.5 * spec.rho - a, 1e-3);
    T = std::clamp(decay / rate, 5.0, 2000.0);
  }
  int steps = cfg.steps;
  if (steps <= 0) {
    double fast = Eigen::EigenSolver<MatrixXd>(g.Abar, false).eigenvalues().cwiseAbs().maxCoeff();
    for (const auto& t : g.types) {
      const MatrixXd back = spec.rho * MatrixXd::Identity(t.drift.rows(), t.drift.cols()) - t.drift;
      fast = std::max(fast, Eigen::EigenSolver<MatrixXd>(back, false).eigenvalues().cwiseAbs().maxCoeff());
    }
    const double h = std::min(0.02, 0.2 / std::max(fast, 1e-12));
    steps = static_cast<int>(std::min(std::ceil(T / h), 400000.0));
  }
  return TimeGrid(0.0, T, steps);
}

SteadyState steady_state_impl(const PopulationSpec& spec, const std::vector<MatrixXd>& Pis, double t) {
  const Index K = spec.K();
  const Index n = spec.n();
  const Gains g = make_gains(spec, Pis);

  // L = Lambda s + ell with Lambda = blockdiag(-R_k^-1 B_k^T).
  const Index mK = g.J.rows();
  MatrixXd Lambda = MatrixXd::Zero(mK, n * K);
  VectorXd ell(mK);
  Index row = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const auto R = p.R.ldlt();
    Lambda.block(row, k * n, p.m(), n) = -R.solve(p.B.transpose());
    ell.segment(row, p.m()) = -R.solve(p.nvec);
    row += p.m();
  }

  // Unknowns z = (s, xbar); rows: offset equations then mean equations.
  MatrixXd M = MatrixXd::Zero(2 * n * K, 2 * n * K);
  VectorXd rhs(2 * n * K);
  row = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const auto& tt = g.types[static_cast<std::size_t>(k)];
    const MatrixXd Hbar = spec.Hbar(k);
    const VectorXd b = p.b(t);

    auto rs = M.middleRows(k * n, n);
    rs.block(0, k * n, n, n) += spec.rho * MatrixXd::Identity(n, n) - tt.drift;
    rs.leftCols(n * K) -= tt.from_mu * Lambda;
    rs.rightCols(n * K) -= tt.from_x + tt.from_mu * g.J;
    rhs.segment(k * n, n) = tt.from_mu * ell + tt.Pi * b - tt.constant;

    auto rx = M.middleRows(n * K + k * n, n);
    rx.rightCols(n * K) = g.Abar.middleRows(k * n, n);
    rx.block(0, k * n, n, n) += p.B * Lambda.block(row, k * n, p.m(), n);
    rx.leftCols(n * K) += Hbar * Lambda;
    rhs.segment(n * K + k * n, n) = -(p.B * ell.segment(row, p.m()) + Hbar * ell + b);
    row += p.m();
  }
  Eigen::FullPivLU<MatrixXd> lu(M);
  if (!lu.isInvertible()) throw NumericalError("steady state undefined");
  const VectorXd z = lu.solve(rhs);
  if (!z.allFinite()) throw NumericalError("steady state undefined");
  return {split(z.head(n * K), K, n), z.tail(n * K)};
}

double tail_time(const PopulationSpec& spec) {
  double t = 0.0;
  for (const auto& p : spec.subpops)
    if (!p.b.times().empty()) t = std::max(t, p.b.times().back());
  return t;
}

}  // namespace

MatrixXd feedback_gain_matrix(const PopulationSpec& spec, const std::vector<MatrixXd>& Pis) {
  const Index K = spec.K();
  const Index n = spec.n();
  if (static_cast<Index>(Pis.size()) != K) throw InputError("feedback gains: need one Pi per type");
  Index rows = 0;
  for (const auto& p : spec.subpops) rows += p.m();
  MatrixXd J(rows, n * K);
  Index row = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const MatrixXd& Pi = Pis[static_cast<std::size_t>(k)];
    if (Pi.rows() != n || Pi.cols() != n) throw InputError("feedback gains: Pi has wrong dimensions");
    const auto R = p.R.ldlt();
    J.middleRows(row, p.m()) = -R.solve(p.B.transpose() * Pi + p.S.transpose()) * selector_matrix(k + 1, n, K) +
                               R.solve(p.S.transpose()) * spec.psibar(k);
    row += p.m();
  }
  return J;
}

VectorXd feedforward(const PopulationSpec& spec, const std::vector<VectorXd>& s) {
  if (static_cast<Index>(s.size()) != spec.K()) throw InputError("feedforward: need one offset per type");
  Index rows = 0;
  for (const auto& p : spec.subpops) rows += p.m();
  VectorXd L(rows);
  Index row = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto& p = spec.subpops[k];
    if (s[k].size() != p.n()) throw InputError("feedforward: offset has wrong dimension");
    L.segment(row, p.m()) = -p.R.ldlt().solve(p.B.transpose() * s[k] + p.nvec);
    row += p.m();
  }
  return L;
}

MatrixXd aggregate_drift_matrix(const PopulationSpec& spec, const std::vector<MatrixXd>& Pis,
                                const MatrixXd& J) {
  const Index K = spec.K();
  const Index n = spec.n();
  if (J.cols() != n * K) throw InputError("aggregate drift: J has wrong dimensions");
  MatrixXd Abar(n * K, n * K);
  for (Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const MatrixXd& Pi = Pis[static_cast<std::size_t>(k)];
    const auto R = p.R.ldlt();
    Abar.middleRows(k * n, n) =
        (p.A - p.B * R.solve(p.B.transpose() * Pi + p.S.transpose())) * selector_matrix(k + 1, n, K) +
        p.B * R.solve(p.S.transpose()) * spec.psibar(k) + spec.Fbar(k) + spec.Hbar(k) * J;
  }
  return Abar;
}

VectorXd aggregate_offset(const PopulationSpec& spec, const std::vector<VectorXd>& s, const VectorXd& L,
                          double t) {
  const Index K = spec.K();
  const Index n = spec.n();
  VectorXd mbar(n * K);
  for (Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    mbar.segment(k * n, n) = -p.B * p.R.ldlt().solve(p.B.transpose() * s[static_cast<std::size_t>(k)] + p.nvec) +
                             spec.Hbar(k) * L + p.b(t);
  }
  return mbar;
}

FeedbackGains feedback_gains(const std::vector<RiccatiSolution>& Pis, const std::vector<Trajectory>& s,
                             const PopulationSpec& spec) {
  if (static_cast<Index>(s.size()) != spec.K()) throw InputError("feedback gains: need one offset path per type");
  FeedbackGains out;
  out.J = feedback_gain_matrix(spec, matrices(Pis));
  out.L.grid = s.front().grid;
  for (int i = 0; i < out.L.grid.size(); ++i) {
    std::vector<VectorXd> si;
    for (const auto& tr : s) {
      if (tr.grid.size() != out.L.grid.size()) throw InputError("feedback gains: offset paths on different grids");
      si.push_back(tr.node(i));
    }
    out.L.values.push_back(feedforward(spec, si));
  }
  return out;
}

AggregateDrift aggregate_drift(const PopulationSpec& spec, const std::vector<RiccatiSolution>& Pis,
                               const MatrixXd& J, const std::vector<Trajectory>& s) {
  AggregateDrift out;
  out.Abar = aggregate_drift_matrix(spec, matrices(Pis), J);
  out.mbar.grid = s.front().grid;
  for (int i = 0; i < out.mbar.grid.size(); ++i) {
    std::vector<VectorXd> si;
    for (const auto& tr : s) si.push_back(tr.node(i));
    out.mbar.values.push_back(aggregate_offset(spec, si, feedforward(spec, si), out.mbar.grid.at(i)));
  }
  return out;
}

SteadyState steady_state(const PopulationSpec& spec, const std::vector<RiccatiSolution>& Pis) {
  return steady_state_impl(spec, matrices(Pis), tail_time(spec));
}

MeanFieldSolution solve_consistency(const PopulationSpec& spec, const SolverConfig& config,
                                    Formulation /*formulation*/) {
  require_valid(spec);
  MeanFieldSolution sol;
  for (const auto& p : spec.subpops) sol.Pi.push_back(solve_discounted_are(p, spec.rho, config.riccati));
  const auto Pis = matrices(sol.Pi);
  Gains g = make_gains(spec, Pis);

  const double margin = 0.5 * spec.rho - spectral_abscissa(g.Abar);
  if (!(margin > 0.0)) {
    std::ostringstream os;
    os << "Abar - (rho/2) I is not stable (margin " << margin << ")";
    diverged(os.str());
  }

  const TimeGrid grid = default_grid(spec, g, config);
  const auto ss = steady_state_impl(spec, Pis, tail_time(spec));
  VectorXd s_T(spec.n() * spec.K());
  for (Index k = 0; k < spec.K(); ++k) s_T.segment(k * spec.n(), spec.n()) = ss.s[static_cast<std::size_t>(k)];

  const VectorXd xi = stacked_initial_mean(spec);
  const VectorXd mu0 = g.J * xi + feedforward(spec, ss.s);
  ConsistencyMap map(spec, grid, {g}, s_T);
  auto res = run_picard(map, constant_path(grid, xi), constant_path(grid, mu0), config);

  sol.s = split_path(res.image.s, spec.K(), spec.n());
  sol.J = g.J;
  sol.Abar = g.Abar;
  sol.L = std::move(res.image.L);
  sol.mbar = std::move(res.image.mbar);
  sol.xbar = std::move(res.image.xbar);
  sol.mubar = std::move(res.image.mubar);
  sol.iterations = res.iterations;
  sol.residual = res.residual;
  return sol;
}

FiniteHorizonSolution solve_finite_horizon(const PopulationSpec& spec, const std::vector<MatrixXd>& Pi_T,
                                           const std::vector<VectorXd>& s_T, const TimeGrid& grid,
                                           const SolverConfig& config) {
  const Index K = spec.K();
  const Index n = spec.n();
  if (static_cast<Index>(Pi_T.size()) != K || static_cast<Index>(s_T.size()) != K)
    throw InputError("finite horizon: need one terminal value per type");

  // Riccati on the doubled grid so RK4 stage times are nodes.
  const TimeGrid fine(grid.t0, grid.t1, 2 * grid.steps);
  FiniteHorizonSolution sol;
  for (Index k = 0; k < K; ++k)
    sol.Pi.push_back(solve_differential_riccati(spec.subpops[static_cast<std::size_t>(k)], spec.rho,
                                                Pi_T[static_cast<std::size_t>(k)], fine));
  std::vector<Gains> gains;
  for (int i = 0; i < fine.size(); ++i) {
    std::vector<MatrixXd> Pis;
    for (const auto& tr : sol.Pi) Pis.push_back(tr.node(i));
    gains.push_back(make_gains(spec, Pis));
  }
  VectorXd terminal(n * K);
  for (Index k = 0; k < K; ++k) terminal.segment(k * n, n) = s_T[static_cast<std::size_t>(k)];

  const VectorXd xi = stacked_initial_mean(spec);
  Trajectory mu0;
  mu0.grid = grid;
  for (int i = 0; i < grid.size(); ++i) {
    mu0.values.push_back(gains[static_cast<std::size_t>(2 * i)].J * xi);
    mu0.derivs.push_back(VectorXd::Zero(mu0.values.back().size()));
  }
  for (int i = 0; i < grid.size(); ++i) sol.J.push_back(gains[static_cast<std::size_t>(2 * i)].J);
  ConsistencyMap map(spec, grid, std::move(gains), terminal);
  auto res = run_picard(map, constant_path(grid, xi), mu0, config);

  // Keep Pi on the caller's grid.
  for (auto& tr : sol.Pi) {
    MatrixTrajectory coarse;
    coarse.grid = grid;
    for (int i = 0; i < grid.size(); ++i) coarse.values.push_back(tr.node(2 * i));
    tr = std::move(coarse);
  }
  sol.s = split_path(res.image.s, K, n);
  sol.L = std::move(res.image.L);
  sol.xbar = std::move(res.image.xbar);
  sol.mubar = std::move(res.image.mubar);
  sol.iterations = res.iterations;
  return sol;
}

namespace {

// d/dt of node values, 4th order: central inside, one-sided at the ends.
std::vector<VectorXd> differentiate(const std::vector<VectorXd>& f, double h) {
  const int N = static_cast<int>(f.size()) - 1;
  if (N < 4) throw InputError("consistency residual: need at least 5 grid points");
  auto at = [&](int i) -> const VectorXd& { return f[static_cast<std::size_t>(i)]; };
  std::vector<VectorXd> d(f.size());
  for (int i = 0; i <= N; ++i) {
    VectorXd v;
    if (i >= 2 && i <= N - 2) {
      v = -at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2);
    } else if (i == 0) {
      v = -25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4);
    } else if (i == 1) {
      v = -3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4);
    } else if (i == N - 1) {
      v = 3.0 * at(N) + 10.0 * at(N - 1) - 18.0 * at(N - 2) + 6.0 * at(N - 3) - at(N - 4);
    } else {
      v = 25.0 * at(N) - 48.0 * at(N - 1) + 36.0 * at(N - 2) - 16.0 * at(N - 3) + 3.0 * at(N - 4);
    }
    d[static_cast<std::size_t>(i)] = v / (12.0 * h);
  }
  return d;
}

}  // namespace

double consistency_residual(const MeanFieldSolution& sol, const PopulationSpec& spec) {
  const Index K = spec.K();
  const Index n = spec.n();
  const TimeGrid& grid = sol.grid();
  const double h = grid.dt();
  const auto dx = differentiate(sol.xbar.values, h);
  std::vector<std::vector<VectorXd>> ds;
  for (const auto& tr : sol.s) ds.push_back(differentiate(tr.values, h));

  // Gains rebuilt type by type from the Riccati matrices alone.
  MatrixXd J(sol.mubar.node(0).size(), n * K);
  std::vector<Index> first_row;
  Index row = 0;
  for (Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const MatrixXd& Pi = sol.Pi[static_cast<std::size_t>(k)].Pi;
    const MatrixXd Rinv = p.R.inverse();
    J.middleRows(row, p.m()).setZero();
    J.block(row, k * n, p.m(), n) = -Rinv * (p.B.transpose() * Pi + p.S.transpose());
    for (Index j = 0; j < K; ++j)
      J.block(row, j * n, p.m(), n) += spec.pi(j) * Rinv * p.S.transpose() * p.psi;
    first_row.push_back(row);
    row += p.m();
  }

  double defect = 0.0;
  for (int i = 0; i < grid.size(); ++i) {
    const double t = grid.at(i);
    const VectorXd& x = sol.xbar.node(i);
    const VectorXd& mu = sol.mubar.node(i);
    VectorXd L(mu.size());
    for (Index k = 0; k < K; ++k) {
      const auto& p = spec.subpops[static_cast<std::size_t>(k)];
      L.segment(first_row[static_cast<std::size_t>(k)], p.m()) =
          -p.R.inverse() * (p.B.transpose() * sol.s[static_cast<std::size_t>(k)].node(i) + p.nvec);
    }
    defect = std::max(defect, (mu - (J * x + L)).lpNorm<Eigen::Infinity>());

    VectorXd Fx = VectorXd::Zero(n), Hmu = VectorXd::Zero(n), psix = VectorXd::Zero(n);
    for (Index k = 0; k < K; ++k) {
      const auto& p = spec.subpops[static_cast<std::size_t>(k)];
      const MatrixXd& Pi = sol.Pi[static_cast<std::size_t>(k)].Pi;
      const MatrixXd Rinv = p.R.inverse();
      const VectorXd& sk = sol.s[static_cast<std::size_t>(k)].node(i);
      Fx.setZero();
      Hmu.setZero();
      psix.setZero();
      for (Index j = 0; j < K; ++j) {
        const auto& pj = spec.subpops[static_cast<std::size_t>(j)];
        Fx += spec.pi(j) * p.F * x.segment(j * n, n);
        psix += spec.pi(j) * p.psi * x.segment(j * n, n);
        Hmu += spec.pi(j) * p.H * mu.segment(first_row[static_cast<std::size_t>(j)], pj.m());
      }
      const VectorXd xk = x.segment(k * n, n);
      const VectorXd uk = mu.segment(first_row[static_cast<std::size_t>(k)], p.m());

      // Mean state of type k driven by its own mean control.
      const VectorXd xdot = p.A * xk + p.B * uk + Fx + Hmu + p.b(t);
      defect = std::max(defect, (dx[static_cast<std::size_t>(i)].segment(k * n, n) - xdot).lpNorm<Eigen::Infinity>());

      const VectorXd sdot =
          spec.rho * sk -
          (p.A.transpose() - p.S * Rinv * p.B.transpose() - Pi * p.B * Rinv * p.B.transpose()) * sk -
          Pi * (Fx + p.B * Rinv * p.S.transpose() * psix + Hmu - p.B * Rinv * p.nvec + p.b(t)) -
          (p.S * Rinv * p.S.transpose() - p.Q) * psix + p.S * Rinv * p.nvec - p.eta;
      defect = std::max(defect,
                        (ds[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] - sdot).lpNorm<Eigen::Infinity>());
    }
  }
  return defect;
}

nlohmann::json solution_to_json(const MeanFieldSolution& sol, int stride) {
  if (stride < 1) throw InputError("solution export: stride must be >= 1");
  using nlohmann::json;
  const TimeGrid& g = sol.grid();
  json out;
  out["grid"] = {{"t0", g.t0}, {"t1", g.t1}, {"steps", g.steps}, {"stride", stride}};
  out["Pi"] = json::array();
  for (const auto& r : sol.Pi)
    out["Pi"].push_back({{"matrix", matrix_to_json(r.Pi)},
                         {"residual", r.residual},
                         {"closed_loop_abscissa", r.closed_loop_abscissa}});
  out["J"] = matrix_to_json(sol.J);
  out["Abar"] = matrix_to_json(sol.Abar);
  out["residual"] = sol.residual;
  out["iterations"] = sol.iterations;
  json t = json::array(), x = json::array(), mu = json::array(), L = json::array(), mb = json::array(),
       s = json::array();
  for (int i = 0; i < g.size(); i += stride) {
    t.push_back(g.at(i));
    x.push_back(vector_to_json(sol.xbar.node(i)));
    mu.push_back(vector_to_json(sol.mubar.node(i)));
    L.push_back(vector_to_json(sol.L.node(i)));
    mb.push_back(vector_to_json(sol.mbar.node(i)));
    json sk = json::array();
    for (const auto& tr : sol.s) sk.push_back(vector_to_json(tr.node(i)));
    s.push_back(sk);
  }
  out["t"] = t;
  out["xbar"] = x;
  out["mubar"] = mu;
  out["L"] = L;
  out["mbar"] = mb;
  out["s"] = s;
  return out;
}

}  // namespace emfg
