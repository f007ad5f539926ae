#include "emfg/trading.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace emfg {

void validate_market(const MarketParams& p) {
  std::vector<std::string> bad;
  if (!(p.sigma > 0.0)) bad.push_back("sigma must be > 0");
  if (!(p.lambda_perm >= 0.0)) bad.push_back("lambda_perm must be >= 0");
  if (!(p.a_temp >= 0.0)) bad.push_back("a_temp must be >= 0");
  if (!(p.phi_urgency >= 0.0)) bad.push_back("phi_urgency must be >= 0");
  if (!(p.psi_terminal >= 0.0)) bad.push_back("psi_terminal must be >= 0");
  if (!(p.T > 0.0)) bad.push_back("T must be > 0");
  if (!(p.fee > 0.0)) bad.push_back("fee must be > 0");
  if (!(p.explore >= 0.0)) bad.push_back("explore must be >= 0");
  if (!std::isfinite(p.F0) || !std::isfinite(p.q0)) bad.push_back("F0 and q0 must be finite");
  if (bad.empty()) return;
  std::string msg = "invalid market parameters:";
  for (const auto& b : bad) msg += " " + b + ";";
  throw InputError(msg);
}

nlohmann::json market_to_json(const MarketParams& p) {
  return {{"sigma", p.sigma},
          {"lambda_perm", p.lambda_perm},
          {"a_temp", p.a_temp},
          {"phi_urgency", p.phi_urgency},
          {"psi_terminal", p.psi_terminal},
          {"T", p.T},
          {"F0", p.F0},
          {"q0", p.q0},
          {"fee", p.fee},
          {"explore", p.explore}};
}

MarketParams market_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("market parameters must be a JSON object");
  MarketParams p;
  auto read = [&](const char* key, double& field) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number()) throw InputError(std::string("market parameter '") + key + "' must be a number");
    field = j.at(key).get<double>();
  };
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"sigma", "lambda_perm", "a_temp", "phi_urgency", "psi_terminal",
                                  "T",     "F0",          "q0",     "fee",         "explore"};
    if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; }))
      throw InputError("unknown market parameter '" + key + "'");
  }
  read("sigma", p.sigma);
  read("lambda_perm", p.lambda_perm);
  read("a_temp", p.a_temp);
  read("phi_urgency", p.phi_urgency);
  read("psi_terminal", p.psi_terminal);
  read("T", p.T);
  read("F0", p.F0);
  read("q0", p.q0);
  read("fee", p.fee);
  read("explore", p.explore);
  validate_market(p);
  return p;
}

MarketParams load_market(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open market parameters '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed market parameters '" + path + "': " + e.what());
  }
  return market_from_json(j);
}

TradingModel to_lqg(const MarketParams& p) {
  validate_market(p);
  SubpopParams s = SubpopParams::zeros(2, 1, 1);
  s.B = (MatrixXd(2, 1) << 1.0, 0.0).finished();
  s.H = (MatrixXd(2, 1) << 0.0, p.lambda_perm).finished();
  s.D = (MatrixXd(2, 1) << 0.0, p.sigma).finished();
  s.Q = (MatrixXd(2, 2) << p.phi_urgency, 0.0, 0.0, 0.0).finished();
  s.R = MatrixXd::Constant(1, 1, p.fee);
  s.S = (MatrixXd(2, 1) << p.a_temp, 1.0).finished();
  s.nvec = VectorXd::Constant(1, -p.a_temp * p.q0);
  s.lambda_explore = p.explore;

  TradingModel model;
  model.spec.subpops = {s};
  model.spec.pi = VectorXd::Ones(1);
  model.spec.rho = 0.0;
  model.spec.x0_mean = (VectorXd(2) << p.q0, 0.0).finished();
  model.spec.x0_cov = MatrixXd::Zero(2, 2);
  model.terminal = (MatrixXd(2, 2) << 2.0 * p.psi_terminal, -1.0, -1.0, 0.0).finished();
  return model;
}

double TradingPolicy::mean(double t, double q, double G) const {
  const double pos = std::clamp((t - grid.t0) / grid.dt(), 0.0, static_cast<double>(grid.steps));
  const int j = std::min(static_cast<int>(pos), grid.steps - 1);
  const double f = pos - j;
  const auto J = static_cast<std::size_t>(j);
  const Eigen::RowVector2d g = (1.0 - f) * gains[J] + f * gains[J + 1];
  const double o = (1.0 - f) * offsets[J] + f * offsets[J + 1];
  return g(0) * q + g(1) * G + o;
}

TradingPolicy plan_policy(const MarketParams& believed, int min_steps) {
  const auto model = to_lqg(believed);
  // Backward Riccati rate near T is about (2 psi + a) / fee.
  const double rate = (2.0 * believed.psi_terminal + believed.a_temp) / believed.fee;
  const double needed = std::ceil(believed.T * rate);
  if (needed > 2e6) throw InputError("plan: terminal penalty too stiff for the trading fee");
  const int steps = std::max(min_steps, static_cast<int>(needed));
  const TimeGrid grid(0.0, believed.T, steps);
  const auto fh = solve_finite_horizon(model.spec, {model.terminal}, {VectorXd::Zero(2)}, grid);

  const auto& p = model.spec.subpops.front();
  TradingPolicy policy;
  policy.grid = grid;
  policy.variance = believed.explore / believed.fee;
  policy.mean_inventory.resize(grid.size());
  for (int j = 0; j < grid.size(); ++j) {
    const MatrixXd& Pi = fh.Pi.front().node(j);
    policy.gains.push_back(-(p.B.transpose() * Pi + p.S.transpose()) / believed.fee);
    policy.offsets.push_back(-(p.B.transpose() * fh.s.front().node(j) + p.nvec)(0) / believed.fee);
    policy.mean_inventory(j) = fh.xbar.node(j)(0);
  }
  return policy;
}

MarketPaths simulate_market(const MarketParams& truth, const TradingPolicy& policy, long traders,
                            const TimeGrid& grid, std::uint64_t seed) {
  validate_market(truth);
  if (traders < 1) throw InputError("market: need at least one trader");
  const int steps = grid.steps;
  const double dt = grid.dt();
  MarketPaths out;
  out.grid = grid;
  out.F = VectorXd::Zero(steps + 1);
  out.q = MatrixXd::Zero(traders, steps + 1);
  out.nu = MatrixXd::Zero(traders, steps);
  out.S = MatrixXd::Zero(traders, steps);
  out.Z = MatrixXd::Zero(traders, steps + 1);
  out.nu_bar = VectorXd::Zero(steps);
  out.F(0) = truth.F0;
  out.q.col(0).setConstant(truth.q0);

  Rng market(derive_seed(seed, 0));
  std::normal_distribution<double> price_noise(0.0, 1.0);
  const std::uint64_t agent_seed = derive_seed(seed, 1);
  std::vector<Rng> agents;
  std::vector<std::normal_distribution<double>> action_noise(static_cast<std::size_t>(traders));
  for (long i = 0; i < traders; ++i) agents.push_back(agent_stream(agent_seed, static_cast<std::uint64_t>(i)));
  const double sd = std::sqrt(policy.variance);

  for (int j = 0; j < steps; ++j) {
    const double t = grid.at(j);
    const double G = out.F(j) - truth.F0;
    for (long i = 0; i < traders; ++i) {
      const double z = action_noise[static_cast<std::size_t>(i)](agents[static_cast<std::size_t>(i)]);
      out.nu(i, j) = policy.mean(t, out.q(i, j), G) + sd * z;
      out.S(i, j) = out.F(j) + truth.a_temp * (out.q(i, j) - truth.q0);
    }
    out.nu_bar(j) = out.nu.col(j).mean();
    out.q.col(j + 1) = out.q.col(j) + dt * out.nu.col(j);
    out.Z.col(j + 1) = out.Z.col(j) - out.S.col(j).cwiseProduct(out.q.col(j + 1) - out.q.col(j));
    out.F(j + 1) = out.F(j) + truth.lambda_perm * out.nu_bar(j) * dt + truth.sigma * std::sqrt(dt) * price_noise(market);
    if (!std::isfinite(out.F(j + 1)) || !out.q.col(j + 1).allFinite() || !out.Z.col(j + 1).allFinite())
      throw NumericalError("market: non-finite value at t = " + std::to_string(grid.at(j + 1)));
  }

  const auto qT = out.q.col(steps).array();
  out.cost = (0.5 * truth.phi_urgency * dt * out.q.leftCols(steps).array().square().rowwise().sum() +
              0.5 * truth.fee * dt * out.nu.array().square().rowwise().sum() - out.Z.col(steps).array() -
              qT * (out.F(steps) - truth.psi_terminal * qT))
                 .matrix();
  return out;
}

TradingPolicy TradingPolicy::constant(const TimeGrid& grid, double rate) {
  TradingPolicy p;
  p.grid = grid;
  p.gains.assign(static_cast<std::size_t>(grid.size()), Eigen::RowVector2d::Zero());
  p.offsets.assign(static_cast<std::size_t>(grid.size()), rate);
  p.mean_inventory = VectorXd::Zero(grid.size());
  return p;
}

void MarketDataset::append(const MarketPaths& paths, double q0) {
  const double dt = paths.grid.dt();
  for (int j = 0; j < paths.grid.steps; ++j) {
    prices.push_back({dt, paths.F(j + 1) - paths.F(j), paths.nu_bar(j)});
    for (Eigen::Index i = 0; i < paths.q.rows(); ++i)
      executions.push_back({paths.S(i, j) - paths.F(j), paths.q(i, j) - q0});
  }
}

MarketEstimate estimate_params(const MarketDataset& data) {
  if (data.prices.empty()) throw InputError("estimate: no price rows");
  MarketEstimate est;
  double sxx = 0.0, sxy = 0.0, sdt = 0.0, sdt2 = 0.0, sxxdt = 0.0;
  for (const auto& r : data.prices) {
    const double x = r.nu_bar * r.dt;
    sxx += x * x;
    sxy += x * r.dF;
    sdt += r.dt;
    sdt2 += r.dt * r.dt;
    sxxdt += x * x * r.dt;
  }
  // rms average rate below 1e-9 counts as idle
  est.lambda_identified = sxx > 1e-18 * sdt2;
  est.lambda_perm = est.lambda_identified ? sxy / sxx : 0.0;
  double ss = 0.0;
  for (const auto& r : data.prices) {
    const double e = r.dF - est.lambda_perm * r.nu_bar * r.dt;
    ss += e * e;
  }
  est.sigma = std::sqrt(ss / sdt);
  est.sigma_se = est.sigma / std::sqrt(2.0 * static_cast<double>(data.prices.size()));
  if (est.lambda_identified) est.lambda_se = est.sigma * std::sqrt(sxxdt) / sxx;

  double scc = 0.0, sgc = 0.0;
  for (const auto& r : data.executions) {
    scc += r.cum_nu * r.cum_nu;
    sgc += r.gap * r.cum_nu;
  }
  const auto rows = static_cast<double>(data.executions.size());
  est.a_identified = rows > 1 && scc > 1e-18 * rows;
  if (est.a_identified) {
    est.a_temp = sgc / scc;
    double se = 0.0;
    for (const auto& r : data.executions) se += std::pow(r.gap - est.a_temp * r.cum_nu, 2);
    est.a_se = std::sqrt(se / (rows - 1.0) / scc);
  }
  return est;
}

void require_identified(const MarketEstimate& est) {
  if (!est.lambda_identified) throw InputError("permanent impact unidentifiable: average trading rate is zero");
}

LearningTrace rl_loop(const MarketParams& truth, const MarketParams& init, int iterations,
                      const EpisodeConfig& config) {
  validate_market(truth);
  validate_market(init);
  if (!(init.explore > 0.0)) throw InputError("rl loop: exploration temperature must be > 0");
  if (iterations < 0 || config.steps < 1 || config.episodes < 1 || config.inner_repeats < 1)
    throw InputError("rl loop: iterations, steps, episodes and inner_repeats must be positive");

  LearningTrace trace;
  MarketDataset data;
  std::uint64_t episode = 0;
  const TimeGrid grid(0.0, init.T, config.steps);

  // One acting round: plan from `believed`, run the episodes, return mean cost.
  auto plan_and_act = [&](const MarketParams& believed, LearningStep& step) {
    const auto policy = plan_policy(believed, config.steps);
    step.gain_q = policy.gains.front()(0);
    step.offset = policy.offsets.front();
    double cost = 0.0;
    for (int e = 0; e < config.episodes; ++e) {
      const auto paths = simulate_market(truth, policy, config.traders, grid, derive_seed(config.seed, episode++));
      data.append(paths, truth.q0);
      cost += paths.cost.mean();
    }
    return cost / config.episodes;
  };

  MarketParams believed = init;
  for (int it = 0; it <= iterations; ++it) {
    LearningStep step;
    step.iteration = it;
    if (it > 0) {
      step.estimate = estimate_params(data);
      believed.sigma = std::max(step.estimate.sigma, 1e-12);
      if (step.estimate.lambda_identified)
        believed.lambda_perm = std::max(0.0, step.estimate.lambda_perm);
      else
        step.message = "permanent impact unidentifiable";
      if (step.estimate.a_identified) believed.a_temp = std::max(0.0, step.estimate.a_temp);
    }
    step.believed = believed;
    const int rounds = it == 0 ? 1 : config.inner_repeats;
    try {
      double cost = 0.0;
      for (int r = 0; r < rounds; ++r) cost += plan_and_act(believed, step);
      step.cost = cost / rounds;
    } catch (const std::exception& e) {
      step.failed = true;
      step.message = e.what();
      step.rows = data.rows();
      trace.steps.push_back(step);
      break;
    }
    step.rows = data.rows();
    trace.steps.push_back(step);
  }
  return trace;
}

void write_trace_csv(std::ostream& out, const LearningTrace& trace) {
  out << "iteration,sigma_hat,lambda_hat,a_hat,cost,n_rows\n";
  char buf[256];
  for (const auto& s : trace.steps) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%zu\n", s.iteration, s.believed.sigma,
                  s.believed.lambda_perm, s.believed.a_temp, s.cost, s.rows);
    out << buf;
  }
}

nlohmann::json trace_to_json(const LearningTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"iteration", s.iteration},
                     {"believed", market_to_json(s.believed)},
                     {"estimate",
                      {{"sigma", s.estimate.sigma},
                       {"sigma_se", s.estimate.sigma_se},
                       {"lambda_perm", s.estimate.lambda_perm},
                       {"lambda_se", s.estimate.lambda_se},
                       {"a_temp", s.estimate.a_temp},
                       {"a_se", s.estimate.a_se},
                       {"lambda_identified", s.estimate.lambda_identified},
                       {"a_identified", s.estimate.a_identified}}},
                     {"gain_q", s.gain_q},
                     {"offset", s.offset},
                     {"cost", s.cost},
                     {"rows", s.rows},
                     {"failed", s.failed},
                     {"message", s.message}});
  }
  return {{"steps", steps}};
}

}  // namespace emfg
