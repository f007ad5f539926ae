#include "emfg/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

namespace emfg {

long SimConfig::N() const { return std::accumulate(counts.begin(), counts.end(), 0L); }

namespace {

struct AgentNoise {
  Rng rng;
  std::normal_distribution<double> normal{0.0, 1.0};

  double operator()() { return normal(rng); }
};

struct TypeBlock {
  Eigen::Index k;
  Eigen::Index begin;
  Eigen::Index count;
  ControlLaw law;
  MatrixXd action_factor;  // F F^T = lambda R^-1
};

// Undiscounted running cost per column: 1/2 dx'Q dx + eta'dx + dx'S u + 1/2 u'R u + n'u.
Eigen::RowVectorXd running_cost(const SubpopParams& p, const MatrixXd& dx, const MatrixXd& u) {
  Eigen::RowVectorXd c = 0.5 * (dx.array() * (p.Q * dx).array()).colwise().sum().matrix();
  c += p.eta.transpose() * dx;
  c += (dx.array() * (p.S * u).array()).colwise().sum().matrix();
  c += 0.5 * (u.array() * (p.R * u).array()).colwise().sum().matrix();
  c += p.nvec.transpose() * u;
  return c;
}

double regularized_entropy_term(const PopulationSpec& spec, Eigen::Index k, double variance_factor, double T) {
  const auto& p = spec.subpops[static_cast<std::size_t>(k)];
  if (!(p.lambda_explore > 0.0)) return 0.0;
  const double H = policy_entropy(k, spec) + 0.5 * static_cast<double>(p.m()) * std::log(variance_factor);
  return -p.lambda_explore * H * (1.0 - std::exp(-spec.rho * T)) / spec.rho;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_err_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

TimeGrid experiment_grid(const ExperimentOptions& opts) {
  if (!(opts.horizon > 0.0) || !(opts.dt > 0.0)) throw InputError("experiment: horizon and dt must be > 0");
  const int steps = static_cast<int>(std::lround(opts.horizon / opts.dt));
  if (steps < 1) throw InputError("experiment: dt exceeds horizon");
  return {0.0, opts.horizon, steps};
}

int checkpoint_step(const TimeGrid& grid, const ExperimentOptions& opts) {
  const double t = opts.checkpoint < 0.0 ? 0.5 * grid.t1 : opts.checkpoint;
  const int j = static_cast<int>(std::lround((t - grid.t0) / grid.dt()));
  if (j < 1 || j > grid.steps) throw InputError("experiment: checkpoint outside the horizon");
  return j;
}

// Log-log slope; NaN when some value is exactly zero (uncoupled systems).
double rate_or_nan(const std::vector<long>& Ns, const std::vector<double>& values) {
  if (std::any_of(values.begin(), values.end(), [](double v) { return !(v > 0.0); }))
    return std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> xs(Ns.begin(), Ns.end());
  return fit_rate(xs, values);
}

std::uint64_t rep_seed(std::uint64_t seed, long N, int rep) {
  return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(N)), static_cast<std::uint64_t>(rep));
}

double deviator_cost(const SimulationBatch& batch, const PopulationSpec& spec, const std::optional<Deviation>& dev) {
  const double vf = dev ? dev->variance_factor : 1.0;
  return batch.cost_sampled(0) + regularized_entropy_term(spec, batch.agent_type.front(), vf, batch.grid.t1);
}

}  // namespace

std::vector<long> proportional_counts(const VectorXd& pi, long N) {
  if (N < 1) throw InputError("population size must be >= 1");
  std::vector<long> counts(static_cast<std::size_t>(pi.size()));
  std::vector<std::pair<double, std::size_t>> remainders;
  long assigned = 0;
  for (Eigen::Index k = 0; k < pi.size(); ++k) {
    const double exact = pi(k) * static_cast<double>(N);
    counts[static_cast<std::size_t>(k)] = static_cast<long>(std::floor(exact));
    assigned += counts[static_cast<std::size_t>(k)];
    remainders.emplace_back(exact - std::floor(exact), static_cast<std::size_t>(k));
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < N; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];
  return counts;
}

SimulationBatch simulate_population(const PopulationSpec& spec, const MeanFieldSolution& mf,
                                    const SimConfig& config) {
  const auto K = spec.K();
  if (static_cast<Eigen::Index>(config.counts.size()) != K) throw InputError("simulation: counts must have K entries");
  if (std::any_of(config.counts.begin(), config.counts.end(), [](long c) { return c < 0; }))
    throw InputError("simulation: counts must be >= 0");
  const long N = config.N();
  if (N < 1) throw InputError("simulation: population is empty");
  if (config.record_stride < 1) throw InputError("simulation: record_stride must be >= 1");
  const TimeGrid& grid = config.grid;
  if (grid.t0 < mf.grid().t0 - 1e-12 || grid.t1 > mf.grid().t1 + 1e-9)
    throw InputError("simulation horizon exceeds the solved horizon");

  const auto n = spec.n();
  const auto m = spec.m();
  Eigen::Index r = 0;
  for (const auto& p : spec.subpops) r = std::max(r, p.D.cols());

  std::vector<TypeBlock> blocks;
  SimulationBatch out;
  out.grid = grid;
  out.counts = config.counts;
  out.mixture = mixture_weights(config.counts);
  Eigen::Index begin = 0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const long c = config.counts[static_cast<std::size_t>(k)];
    GaussianSampler action(exploration_covariance(spec, k));
    blocks.push_back({k, begin, c, ControlLaw(spec, mf, k), action.factor()});
    out.agent_type.insert(out.agent_type.end(), static_cast<std::size_t>(c), static_cast<int>(k));
    begin += c;
  }

  const auto deviant = std::find_if(blocks.begin(), blocks.end(), [](const TypeBlock& b) { return b.count > 0; });
  double dev_noise_scale = 1.0;
  if (config.deviation) {
    if (config.deviation->delta.size() != m) throw InputError("deviation: delta has wrong dimension");
    if (!(config.deviation->variance_factor > 0.0)) throw InputError("deviation: variance factor must be > 0");
    if (config.deviators < 1) throw InputError("deviation: deviators must be >= 1");
    dev_noise_scale = std::sqrt(config.deviation->variance_factor);
  }
  const Eigen::Index dev_count = std::min<Eigen::Index>(config.deviators, deviant->count);

  std::vector<AgentNoise> noise;
  noise.reserve(static_cast<std::size_t>(N));
  MatrixXd X(n, N);
  const GaussianSampler x0(spec.x0_cov);
  for (long i = 0; i < N; ++i) {
    noise.push_back({agent_stream(config.seed, static_cast<std::uint64_t>(i))});
    VectorXd z(n);
    for (Eigen::Index d = 0; d < n; ++d) z(d) = noise.back()();
    X.col(i) = spec.x0_mean + x0.factor() * z;
  }

  // Limit mean field advanced with the agents' Euler step.
  MatrixXd limit = spec.x0_mean.replicate(1, K);

  const bool sample = config.mode == SimMode::kExploratory;
  const double dt = grid.dt();
  MatrixXd Mu(m, N), U(m, N), E(m, N), W = MatrixXd::Zero(r, N);
  std::vector<VectorXd> offsets(static_cast<std::size_t>(K));
  out.cost_sampled = VectorXd::Zero(N);
  out.cost_mean = VectorXd::Zero(N);

  for (int j = 0; j <= grid.steps; ++j) {
    const double t = grid.at(j);
    for (const auto& b : blocks) {
      offsets[static_cast<std::size_t>(b.k)] = b.law.offset(t);
      if (b.count == 0) continue;
      Mu.middleCols(b.begin, b.count) =
          (b.law.gain() * X.middleCols(b.begin, b.count)).colwise() + offsets[static_cast<std::size_t>(b.k)];
    }
    if (config.deviation) {
      auto dev = Mu.middleCols(deviant->begin, dev_count);
      dev = (config.deviation->mean_scale * dev).colwise() + config.deviation->delta;
    }

    for (long i = 0; i < N; ++i)
      for (Eigen::Index d = 0; d < m; ++d) E(d, i) = noise[static_cast<std::size_t>(i)]();
    if (sample) {
      for (const auto& b : blocks)
        if (b.count > 0)
          U.middleCols(b.begin, b.count) = Mu.middleCols(b.begin, b.count) + b.action_factor * E.middleCols(b.begin, b.count);
      if (config.deviation)
        U.middleCols(deviant->begin, dev_count) =
            Mu.middleCols(deviant->begin, dev_count) +
            dev_noise_scale * deviant->action_factor * E.middleCols(deviant->begin, dev_count);
    } else {
      U = Mu;
    }

    const VectorXd x_avg = X.rowwise().mean();
    const VectorXd mu_avg = Mu.rowwise().mean();
    VectorXd xbar_types = VectorXd::Zero(n * K);
    for (const auto& b : blocks)
      if (b.count > 0) xbar_types.segment(b.k * n, n) = X.middleCols(b.begin, b.count).rowwise().mean();

    VectorXd x_drive = x_avg;
    VectorXd mu_drive = mu_avg;
    if (config.coupling == Coupling::kMeanField) {
      x_drive = limit * spec.pi;
      mu_drive = VectorXd::Zero(m);
      for (const auto& b : blocks)
        mu_drive += spec.pi(b.k) * (b.law.gain() * limit.col(b.k) + offsets[static_cast<std::size_t>(b.k)]);
    }

    const double w = dt * ((j == 0 || j == grid.steps) ? 0.5 : 1.0) * std::exp(-spec.rho * (t - grid.t0));
    VectorXd running = VectorXd::Zero(K);
    for (const auto& b : blocks) {
      if (b.count == 0) continue;
      const auto& p = spec.subpops[static_cast<std::size_t>(b.k)];
      const MatrixXd dx = X.middleCols(b.begin, b.count).colwise() - p.psi * x_drive;
      const Eigen::RowVectorXd c_mean = running_cost(p, dx, Mu.middleCols(b.begin, b.count));
      const Eigen::RowVectorXd c_sampled = sample ? running_cost(p, dx, U.middleCols(b.begin, b.count)) : c_mean;
      out.cost_mean.segment(b.begin, b.count) += w * c_mean.transpose();
      out.cost_sampled.segment(b.begin, b.count) += w * c_sampled.transpose();
      running(b.k) = c_sampled.mean();
    }

    out.xbar.push_back(xbar_types);
    out.x_avg.push_back(x_avg);
    out.mu_avg.push_back(mu_avg);
    out.running_avg.push_back(running);
    if (j % config.record_stride == 0 || j == grid.steps) {
      out.record_steps.push_back(j);
      out.states.push_back(X);
      out.means.push_back(Mu);
      out.actions.push_back(U);
    }
    if (j == grid.steps) break;

    const double sqdt = std::sqrt(dt);
    for (const auto& b : blocks)
      for (Eigen::Index i = b.begin; i < b.begin + b.count; ++i)
        for (Eigen::Index d = 0; d < spec.subpops[static_cast<std::size_t>(b.k)].D.cols(); ++d)
          W(d, i) = sqdt * noise[static_cast<std::size_t>(i)]();
    if (config.keep_noise) out.brownian.push_back(W);

    for (const auto& b : blocks) {
      const auto& p = spec.subpops[static_cast<std::size_t>(b.k)];
      const VectorXd common = p.F * x_drive + p.H * mu_drive + p.b(t);
      if (b.count > 0) {
        auto Xb = X.middleCols(b.begin, b.count);
        const MatrixXd drift = (p.A * Xb + p.B * Mu.middleCols(b.begin, b.count)).colwise() + common;
        Xb += dt * drift + p.D * W.topRows(p.D.cols()).middleCols(b.begin, b.count);
      }
      if (config.coupling == Coupling::kMeanField) {
        const VectorXd mu_l = b.law.gain() * limit.col(b.k) + offsets[static_cast<std::size_t>(b.k)];
        limit.col(b.k) += dt * (p.A * limit.col(b.k) + p.B * mu_l + common);
      }
    }
    if (!X.allFinite()) {
      Eigen::Index bad = 0;
      for (; bad < N; ++bad)
        if (!X.col(bad).allFinite()) break;
      throw NumericalError("non-finite state for agent " + std::to_string(bad) + " at t = " +
                           std::to_string(grid.at(j + 1)));
    }
  }
  return out;
}

Trajectory simulate_representative(const PopulationSpec& spec, const MeanFieldSolution& mf, const TimeGrid& grid,
                                   std::uint64_t seed, Eigen::Index k, SimMode mode) {
  if (k < 0 || k >= spec.K()) throw InputError("simulation: type index out of range");
  SimConfig cfg;
  cfg.counts.assign(static_cast<std::size_t>(spec.K()), 0);
  cfg.counts[static_cast<std::size_t>(k)] = 1;
  cfg.grid = grid;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.coupling = Coupling::kMeanField;
  const auto batch = simulate_population(spec, mf, cfg);
  Trajectory path;
  path.grid = grid;
  for (const auto& X : batch.states) path.values.push_back(X.col(0));
  return path;
}

CostEstimate empirical_cost(const SimulationBatch& batch, const PopulationSpec& spec, Eigen::Index k, CostMode mode,
                            double tail_tol) {
  if (k < 0 || k >= spec.K()) throw InputError("cost: type index out of range");
  if (!(spec.rho > 0.0)) throw InputError("cost: discount rho must be > 0");
  std::vector<double> values;
  for (std::size_t i = 0; i < batch.agent_type.size(); ++i) {
    if (batch.agent_type[i] != k) continue;
    const auto idx = static_cast<Eigen::Index>(i);
    values.push_back(mode == CostMode::kClassical ? batch.cost_mean(idx) : batch.cost_sampled(idx));
  }
  if (values.empty()) throw InputError("cost: no agents of this type");

  const double T = batch.grid.t1 - batch.grid.t0;
  const auto& p = spec.subpops[static_cast<std::size_t>(k)];
  double level = 0.0;
  for (std::size_t j = batch.running_avg.size() / 2; j < batch.running_avg.size(); ++j)
    level = std::max(level, std::abs(batch.running_avg[j](k)));
  CostEstimate est;
  est.mode = mode;
  if (mode == CostMode::kRegularized) {
    const double entropy = regularized_entropy_term(spec, k, 1.0, T);
    for (double& v : values) v += entropy;
    if (p.lambda_explore > 0.0) level += p.lambda_explore * std::abs(policy_entropy(k, spec));
  }
  est.values = Eigen::Map<VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  est.mean = mean_of(values);
  est.std_err = std_err_of(values);
  // Twice the late running-cost level, discounted from T to infinity.
  est.truncation_bound = 2.0 * level * std::exp(-spec.rho * T) / spec.rho;
  if (est.truncation_bound > tail_tol * (1.0 + std::abs(est.mean)))
    throw InputError("horizon too short for rho: tail bound " + std::to_string(est.truncation_bound));
  return est;
}

void write_csv(std::ostream& out, const std::vector<CsvRow>& rows) {
  out << "experiment,N,rep,checkpoint_t,value,std_err\n";
  char buf[256];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%s,%ld,%ld,%.10g,%.17g,%.17g\n", row.experiment.c_str(), row.N, row.rep,
                  row.checkpoint_t, row.value, row.std_err);
    out << buf;
  }
}

RateResult coupling_gap_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf,
                                   const std::vector<long>& Ns, int reps, std::uint64_t seed,
                                   const ExperimentOptions& opts) {
  if (Ns.size() < 3) throw InputError("rate experiment needs at least 3 population sizes");
  if (reps < 2) throw InputError("experiment: reps must be >= 2");
  const TimeGrid grid = experiment_grid(opts);
  const int check = checkpoint_step(grid, opts);
  RateResult res;
  res.Ns = Ns;
  for (long N : Ns) {
    SimConfig cfg;
    cfg.counts = proportional_counts(spec.pi, N);
    cfg.grid = grid;
    cfg.mode = opts.mode;
    cfg.record_stride = check;
    std::vector<double> gaps;
    for (int rep = 0; rep < reps; ++rep) {
      cfg.seed = rep_seed(seed, N, rep);
      cfg.coupling = Coupling::kEmpirical;
      const auto finite = simulate_population(spec, mf, cfg);
      cfg.coupling = Coupling::kMeanField;
      const auto limit = simulate_population(spec, mf, cfg);
      const double gap = (finite.states[1] - limit.states[1]).colwise().squaredNorm().mean();
      gaps.push_back(gap);
      res.rows.push_back({"coupling_gap", N, rep, grid.at(check), gap, 0.0});
    }
    res.value.push_back(mean_of(gaps));
    res.std_err.push_back(std_err_of(gaps));
    res.rows.push_back({"coupling_gap", N, -1, grid.at(check), res.value.back(), res.std_err.back()});
  }
  res.slope = rate_or_nan(Ns, res.value);
  return res;
}

RateResult cost_gap_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf, const std::vector<long>& Ns,
                               int reps, std::uint64_t seed, const std::optional<Deviation>& deviation,
                               const ExperimentOptions& opts) {
  if (Ns.size() < 3) throw InputError("rate experiment needs at least 3 population sizes");
  if (reps < 2) throw InputError("experiment: reps must be >= 2");
  const TimeGrid grid = experiment_grid(opts);
  RateResult res;
  res.Ns = Ns;
  for (long N : Ns) {
    SimConfig cfg;
    cfg.counts = proportional_counts(spec.pi, N);
    cfg.grid = grid;
    cfg.mode = opts.mode;
    cfg.deviation = deviation;
    cfg.record_stride = grid.steps;
    std::vector<double> diffs;
    for (int rep = 0; rep < reps; ++rep) {
      cfg.seed = rep_seed(seed, N, rep);
      cfg.coupling = Coupling::kEmpirical;
      const double finite = deviator_cost(simulate_population(spec, mf, cfg), spec, deviation);
      cfg.coupling = Coupling::kMeanField;
      const double limit = deviator_cost(simulate_population(spec, mf, cfg), spec, deviation);
      diffs.push_back(finite - limit);
      res.rows.push_back({"cost_gap", N, rep, grid.t1, finite - limit, 0.0});
    }
    res.value.push_back(std::abs(mean_of(diffs)));
    res.std_err.push_back(std_err_of(diffs));
    res.rows.push_back({"cost_gap", N, -1, grid.t1, res.value.back(), res.std_err.back()});
  }
  res.slope = rate_or_nan(Ns, res.value);
  return res;
}

std::vector<Deviation> default_deviation_family(Eigen::Index m) {
  std::vector<Deviation> family;
  for (double shift : {-0.05, -0.01, 0.01, 0.05}) family.push_back({VectorXd::Constant(m, shift), 1.0, 1.0});
  for (double factor : {0.9, 1.1}) family.push_back({VectorXd::Zero(m), factor, 1.0});
  for (double scale : {0.98, 1.02}) family.push_back({VectorXd::Zero(m), 1.0, scale});
  return family;
}

NashResult nash_deviation_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf, long N,
                                     const std::vector<Deviation>& family, int reps, std::uint64_t seed,
                                     const ExperimentOptions& opts) {
  if (family.empty()) throw InputError("nash: deviation family is empty");
  if (reps < 2) throw InputError("experiment: reps must be >= 2");
  const TimeGrid grid = experiment_grid(opts);
  SimConfig cfg;
  cfg.counts = proportional_counts(spec.pi, N);
  cfg.grid = grid;
  cfg.mode = opts.mode;
  cfg.record_stride = grid.steps;

  std::vector<double> eq_costs;
  std::vector<std::vector<double>> gains(family.size());
  for (int rep = 0; rep < reps; ++rep) {
    cfg.seed = rep_seed(seed, N, rep);
    cfg.deviation.reset();
    const double eq = deviator_cost(simulate_population(spec, mf, cfg), spec, std::nullopt);
    eq_costs.push_back(eq);
    for (std::size_t f = 0; f < family.size(); ++f) {
      cfg.deviation = family[f];
      gains[f].push_back(eq - deviator_cost(simulate_population(spec, mf, cfg), spec, cfg.deviation));
    }
  }
  NashResult res;
  res.N = N;
  res.cost_equilibrium = mean_of(eq_costs);
  double best = 0.0;
  for (std::size_t f = 0; f < family.size(); ++f) {
    res.gain.push_back(mean_of(gains[f]));
    res.gain_std_err.push_back(std_err_of(gains[f]));
    best = std::max(best, res.gain.back());
    res.rows.push_back({"nash_gain_" + std::to_string(f), N, -1, grid.t1, res.gain.back(), res.gain_std_err.back()});
  }
  res.eps_hat = best;
  res.rows.push_back({"nash_eps", N, -1, grid.t1, best, 0.0});
  return res;
}

OptimalityResult representative_optimality_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf,
                                                      Eigen::Index k, const std::vector<Deviation>& family,
                                                      long agents, std::uint64_t seed, const ExperimentOptions& opts) {
  if (k < 0 || k >= spec.K()) throw InputError("optimality: type index out of range");
  if (agents < 2) throw InputError("optimality: need at least 2 agents");
  if (!(spec.rho > 0.0)) throw InputError("optimality: discount rho must be > 0");
  SimConfig cfg;
  cfg.counts.assign(static_cast<std::size_t>(spec.K()), 0);
  cfg.counts[static_cast<std::size_t>(k)] = agents;
  cfg.grid = experiment_grid(opts);
  cfg.seed = seed;
  cfg.mode = SimMode::kExploratory;
  cfg.coupling = Coupling::kMeanField;
  cfg.record_stride = cfg.grid.steps;
  cfg.deviators = agents;
  const double T = cfg.grid.t1;

  const auto eq = simulate_population(spec, mf, cfg);
  const VectorXd eq_cost = eq.cost_sampled.array() + regularized_entropy_term(spec, k, 1.0, T);
  OptimalityResult res;
  res.cost_equilibrium = eq_cost.mean();
  for (std::size_t f = 0; f < family.size(); ++f) {
    cfg.deviation = family[f];
    const auto dev = simulate_population(spec, mf, cfg);
    const VectorXd diff =
        (dev.cost_sampled.array() + regularized_entropy_term(spec, k, family[f].variance_factor, T)).matrix() -
        eq_cost;
    const std::vector<double> d(diff.data(), diff.data() + diff.size());
    res.excess.push_back(mean_of(d));
    res.excess_std_err.push_back(std_err_of(d));
    res.rows.push_back({"optimality_excess_" + std::to_string(f), agents, -1, T, res.excess.back(),
                        res.excess_std_err.back()});
  }
  return res;
}

CoeResult coe_experiment(const PopulationSpec& spec, const MeanFieldSolution& mf, Eigen::Index k, int reps,
                         std::uint64_t seed, const ExperimentOptions& opts) {
  if (k < 0 || k >= spec.K()) throw InputError("coe: type index out of range");
  if (reps < 2) throw InputError("experiment: reps must be >= 2");
  SimConfig cfg;
  cfg.counts.assign(static_cast<std::size_t>(spec.K()), 0);
  cfg.counts[static_cast<std::size_t>(k)] = reps;
  cfg.grid = experiment_grid(opts);
  cfg.seed = seed;
  cfg.mode = SimMode::kExploratory;
  cfg.coupling = Coupling::kMeanField;
  cfg.record_stride = cfg.grid.steps;
  const auto batch = simulate_population(spec, mf, cfg);
  const auto sampled = empirical_cost(batch, spec, k, CostMode::kExploratory);
  const auto classical = empirical_cost(batch, spec, k, CostMode::kClassical);
  const VectorXd diff = sampled.values - classical.values;
  std::vector<double> d(diff.data(), diff.data() + diff.size());

  CoeResult res;
  res.estimate = mean_of(d);
  res.std_err = std_err_of(d);
  res.analytic = analytic_coe(k, spec);
  res.rows.push_back({"coe", reps, -1, cfg.grid.t1, res.estimate, res.std_err});
  res.rows.push_back({"coe_analytic", reps, -1, cfg.grid.t1, res.analytic, 0.0});
  return res;
}

}  // namespace emfg
