// emfg: solve exploratory LQG mean field games and run the experiments.
//
//   emfg solve SPEC [--out DIR] [--tol --damping --steps --horizon]
//   emfg experiment KIND SPEC [--out DIR] [--seed --reps --Ns --steps --horizon --lambda-list ...]
//   emfg trade simulate|learn PARAMS [--out DIR] [...]
//
// Exit codes: 0 success, 1 usage or I/O, 2 numerical failure. Errors are
// printed to stderr as one JSON object and, when possible, written to
// DIR/error.json.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "emfg/simulator.hpp"
#include "emfg/trading.hpp"
#include "emfg/variational.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emfg;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string input;
  std::string init;
  std::string kind;
  std::string out = "emfg_out";
  std::uint64_t seed = 1;
  int steps = 0;
  double horizon = 0.0;
  double tol = 1e-10;
  double damping = 0.5;
  int reps = 0;
  std::string Ns;
  std::string lambdas = "1,0.1,0.01,0.001,0.0001,1e-05,1e-06";
  std::string family = "default";
  double shift = 0.1;
  int type = 0;
  long traders = 20;
  int episodes = 0;
  int iterations = 5;
  int repeats = 5;
};

// Overrides recorded in the manifest: every flag the user actually passed.
json collect_overrides(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->count() == 0 || opt->get_name() == "--help") continue;
    const auto res = opt->results();
    j[opt->get_name()] = res.size() == 1 ? json(res.front()) : json(res);
  }
  return j;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

class OutputDir {
 public:
  OutputDir(const std::string& path, const std::string& input, const std::string& input_name) : path_(path) {
    std::error_code ec;
    fs::create_directories(path_, ec);
    if (ec) throw InputError("cannot create output directory '" + path + "': " + ec.message());
    fs::copy_file(input, path_ / input_name, fs::copy_options::overwrite_existing, ec);
    if (ec) throw InputError("cannot copy '" + input + "' into the output directory: " + ec.message());
  }

  std::ofstream open(const std::string& name) const {
    std::ofstream out(path_ / name, std::ios::binary);
    if (!out) throw InputError("cannot write '" + (path_ / name).string() + "'");
    out.imbue(std::locale::classic());
    return out;
  }

  void write_json(const std::string& name, const json& j) const { open(name) << j.dump(2) << "\n"; }

 private:
  fs::path path_;
};

void write_manifest(const OutputDir& dir, const std::string& command, const Options& o, const json& overrides) {
  dir.write_json("manifest.json", {{"command", command},
                                   {"input", o.input},
                                   {"overrides", overrides},
                                   {"seed", o.seed},
                                   {"out", o.out},
                                   {"version", kVersion},
                                   {"timestamp", utc_timestamp()}});
}

std::vector<long> parse_longs(const std::string& list) {
  std::vector<long> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stol(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("bad integer '" + item + "' in list '" + list + "'");
    }
  }
  if (out.empty()) throw InputError("empty list");
  return out;
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  ss.imbue(std::locale::classic());
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    is.imbue(std::locale::classic());
    double v = 0.0;
    if (!(is >> v) || !is.eof()) throw InputError("bad number '" + item + "' in list '" + list + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError("empty list");
  return out;
}

SolverConfig solver_config(const Options& o) {
  SolverConfig cfg;
  cfg.tol = o.tol;
  cfg.damping = o.damping;
  return cfg;
}

// Solves on a horizon that covers the simulation.
MeanFieldSolution solve_for(const PopulationSpec& spec, const Options& o, double sim_horizon) {
  SolverConfig cfg = solver_config(o);
  auto mf = solve_consistency(spec, cfg);
  if (mf.grid().t1 < sim_horizon) {
    cfg.horizon = sim_horizon;
    mf = solve_consistency(spec, cfg);
  }
  return mf;
}

ExperimentOptions experiment_options(const Options& o, double default_horizon, double default_dt) {
  ExperimentOptions e;
  e.horizon = o.horizon > 0.0 ? o.horizon : default_horizon;
  e.dt = o.steps > 0 ? e.horizon / o.steps : default_dt;
  return e;
}

json rate_summary(const RateResult& r) {
  return {{"Ns", r.Ns}, {"value", r.value}, {"std_err", r.std_err}, {"slope", std::isnan(r.slope) ? json() : json(r.slope)}};
}

int cmd_solve(const Options& o, const json& overrides, const std::string& command) {
  const auto spec = load_spec(o.input);
  OutputDir dir(o.out, o.input, "spec.json");
  write_manifest(dir, command, o, overrides);
  SolverConfig cfg = solver_config(o);
  cfg.horizon = o.horizon;
  cfg.steps = o.steps;
  const auto mf = solve_consistency(spec, cfg);
  dir.write_json("meanfield_solution.json", solution_to_json(mf));

  json types = json::array();
  bool stable = true;
  for (Eigen::Index k = 0; k < spec.K(); ++k) {
    const auto rep = verify_stability(mf.Pi[static_cast<std::size_t>(k)], mf.Abar, spec.rho);
    stable = stable && rep.ok;
    types.push_back({{"type", k},
                     {"ok", rep.ok},
                     {"pi_min_eigenvalue", rep.pi_min_eigenvalue},
                     {"abar_margin", rep.abar_margin},
                     {"closed_loop_margin", rep.closed_loop_margin},
                     {"riccati_residual", mf.Pi[static_cast<std::size_t>(k)].residual},
                     {"failures", rep.failures}});
  }
  const double checker = consistency_residual(mf, spec);
  dir.write_json("stability_report.json", {{"converged", true},
                                           {"stable", stable},
                                           {"iterations", mf.iterations},
                                           {"residual", mf.residual},
                                           {"checker_residual", checker},
                                           {"types", types}});
  if (!stable) throw NumericalError("solution fails the stability margins");
  std::cout << json{{"status", "ok"}, {"residual", mf.residual}, {"iterations", mf.iterations}}.dump() << "\n";
  return 0;
}

int cmd_experiment(const Options& o, const json& overrides, const std::string& command) {
  auto spec = load_spec(o.input);
  OutputDir dir(o.out, o.input, "spec.json");
  write_manifest(dir, command, o, overrides);
  auto csv = dir.open("results.csv");
  json summary{{"kind", o.kind}};
  const int reps = o.reps;

  if (o.kind == "coupling-gap" || o.kind == "cost-gap" || o.kind == "nash") {
    const auto opts = experiment_options(o, 10.0, 0.01);
    const auto mf = solve_for(spec, o, opts.horizon);
    const auto Ns = parse_longs(o.Ns.empty() ? "16,64,256,1024" : o.Ns);
    if (o.kind == "coupling-gap") {
      const auto r = coupling_gap_experiment(spec, mf, Ns, reps > 0 ? reps : 64, o.seed, opts);
      write_csv(csv, r.rows);
      summary["result"] = rate_summary(r);
    } else if (o.kind == "cost-gap") {
      const Deviation dev{VectorXd::Constant(spec.m(), o.shift), 1.0, 1.0};
      const auto r = cost_gap_experiment(spec, mf, Ns, reps > 0 ? reps : 64, o.seed, dev, opts);
      write_csv(csv, r.rows);
      summary["result"] = rate_summary(r);
    } else {
      std::vector<Deviation> family;
      if (o.family == "default")
        family = default_deviation_family(spec.m());
      else if (o.family == "equilibrium")
        family = {Deviation{VectorXd::Zero(spec.m()), 1.0, 1.0}};
      else
        throw InputError("unknown deviation family '" + o.family + "' (default|equilibrium)");
      std::vector<CsvRow> rows;
      json eps = json::array();
      for (long N : Ns) {
        const auto r = nash_deviation_experiment(spec, mf, N, family, reps > 0 ? reps : 64, o.seed, opts);
        rows.insert(rows.end(), r.rows.begin(), r.rows.end());
        eps.push_back({{"N", N}, {"eps_hat", r.eps_hat}, {"gain", r.gain}, {"gain_std_err", r.gain_std_err}});
      }
      write_csv(csv, rows);
      summary["result"] = eps;
    }
  } else if (o.kind == "coe") {
    if (!(spec.rho > 0.0)) throw InputError("coe needs rho > 0");
    const auto opts = experiment_options(o, 20.0 / spec.rho, 0.05);
    const auto mf = solve_for(spec, o, opts.horizon);
    const auto r = coe_experiment(spec, mf, o.type, reps > 0 ? reps : 10000, o.seed, opts);
    write_csv(csv, r.rows);
    summary["result"] = {{"estimate", r.estimate},
                         {"std_err", r.std_err},
                         {"analytic", r.analytic},
                         {"ci95", {r.estimate - 1.96 * r.std_err, r.estimate + 1.96 * r.std_err}}};
  } else if (o.kind == "lambda-sweep") {
    const auto lambdas = parse_doubles(o.lambdas);
    csv << "lambda,value_gap,value_gap_direct,coe,entropy\n";
    std::vector<double> gaps;
    char buf[256];
    for (double lam : lambdas) {
      for (auto& p : spec.subpops) p.lambda_explore = lam;
      const double gap = value_gap(o.type, spec);
      gaps.push_back(gap);
      std::snprintf(buf, sizeof buf, "%.10g,%.17g,%.17g,%.17g,%.17g\n", lam, gap, value_gap_direct(o.type, spec),
                    analytic_coe(o.type, spec), policy_entropy(o.type, spec));
      csv << buf;
    }
    bool monotone = true;
    for (std::size_t i = 1; i < gaps.size(); ++i) monotone = monotone && std::abs(gaps[i]) < std::abs(gaps[i - 1]);
    summary["result"] = {{"lambda", lambdas}, {"value_gap", gaps}, {"magnitude_monotone", monotone}};
  } else if (o.kind == "entropy-audit") {
    if (spec.m() > 2) throw InputError("entropy audit: quadrature restricted to m <= 2");
    csv << "type,lambda,entropy_closed,entropy_quadrature,log_density_closed,log_density_quadrature,"
           "half_log_det_form\n";
    json rows = json::array();
    char buf[512];
    for (Eigen::Index k = 0; k < spec.K(); ++k) {
      const auto& p = spec.subpops[static_cast<std::size_t>(k)];
      const double H = policy_entropy(k, spec);
      const auto g = GridDensity::gaussian(VectorXd::Zero(spec.m()), exploration_covariance(spec, k),
                                           spec.m() == 1 ? 2001 : 401);
      const double Hq = -g.neg_entropy();
      const double log_closed = discounted_log_density_term(k, spec);
      const double log_quad = -p.lambda_explore / spec.rho * Hq;
      const MatrixXd scaled = 2.0 * 3.14159265358979323846 * p.lambda_explore * p.R.inverse();
      const double display = p.lambda_explore / (2.0 * spec.rho) * std::log(scaled.determinant());
      std::snprintf(buf, sizeof buf, "%ld,%.10g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long>(k),
                    p.lambda_explore, H, Hq, log_closed, log_quad, display);
      csv << buf;
      rows.push_back({{"type", k},
                      {"entropy_closed", H},
                      {"entropy_quadrature", Hq},
                      {"log_density_closed", log_closed},
                      {"log_density_quadrature", log_quad},
                      {"half_log_det_form", display}});
    }
    summary["result"] = rows;
  } else {
    throw InputError("unknown experiment '" + o.kind +
                     "' (coupling-gap|cost-gap|nash|coe|lambda-sweep|entropy-audit)");
  }
  dir.write_json("summary.json", summary);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_trade(const Options& o, const json& overrides, const std::string& command) {
  const auto params = load_market(o.input);
  OutputDir dir(o.out, o.input, "params.json");
  write_manifest(dir, command, o, overrides);
  const int steps = o.steps > 0 ? o.steps : 200;
  json summary{{"kind", o.kind}};

  if (o.kind == "simulate") {
    const auto policy = plan_policy(params, steps);
    const TimeGrid grid(0.0, params.T, steps);
    const int episodes = o.episodes > 0 ? o.episodes : 200;
    auto csv = dir.open("episodes.csv");
    csv << "episode,F_T_minus_F0,mean_q_T,mean_cost\n";
    auto path_csv = dir.open("path.csv");
    path_csv << "t,F,nu_bar,mean_q\n";
    std::vector<double> moves;
    char buf[256];
    for (int e = 0; e < episodes; ++e) {
      const auto paths = simulate_market(params, policy, o.traders, grid, derive_seed(o.seed, static_cast<std::uint64_t>(e)));
      const double move = paths.F(steps) - params.F0;
      moves.push_back(move);
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e, move, paths.q.col(steps).mean(), paths.cost.mean());
      csv << buf;
      if (e != 0) continue;
      for (int j = 0; j <= steps; ++j) {
        std::snprintf(buf, sizeof buf, "%.10g,%.17g,%.17g,%.17g\n", grid.at(j), paths.F(j),
                      j < steps ? paths.nu_bar(j) : paths.nu_bar(steps - 1), paths.q.col(j).mean());
        path_csv << buf;
      }
    }
    double mean = 0.0, ss = 0.0;
    for (double m : moves) mean += m / static_cast<double>(moves.size());
    for (double m : moves) ss += (m - mean) * (m - mean);
    const double se = moves.size() > 1 ? std::sqrt(ss / static_cast<double>(moves.size() - 1) / static_cast<double>(moves.size())) : 0.0;
    const bool zero_impact = params.lambda_perm == 0.0;
    summary["martingale_check"] = {{"applicable", zero_impact},
                                   {"mean_F_T_minus_F0", mean},
                                   {"std_err", se},
                                   {"passed", !zero_impact || std::abs(mean) < 4.0 * se}};
  } else if (o.kind == "learn") {
    const auto init = o.init.empty() ? params : load_market(o.init);
    EpisodeConfig cfg;
    cfg.traders = o.traders;
    cfg.steps = steps;
    cfg.episodes = o.episodes > 0 ? o.episodes : 1;
    cfg.inner_repeats = o.repeats;
    cfg.seed = o.seed;
    const auto trace = rl_loop(params, init, o.iterations, cfg);
    auto csv = dir.open("trace.csv");
    write_trace_csv(csv, trace);
    dir.write_json("trace.json", trace_to_json(trace));
    double drift = 0.0;
    for (const auto& s : trace.steps)
      if (!s.failed) drift = std::max(drift, std::abs(s.gain_q - trace.steps.front().gain_q) / std::abs(trace.steps.front().gain_q));
    const auto& last = trace.steps.back();
    summary["result"] = {{"iterations", trace.steps.size()},
                         {"failed", last.failed},
                         {"message", last.message},
                         {"max_gain_drift", drift},
                         {"lambda_hat", last.estimate.lambda_perm},
                         {"lambda_se", last.estimate.lambda_se},
                         {"a_hat", last.estimate.a_temp},
                         {"a_se", last.estimate.a_se},
                         {"sigma_hat", last.estimate.sigma}};
    if (last.failed) {
      dir.write_json("summary.json", summary);
      throw NumericalError("learning loop halted: " + last.message);
    }
  } else {
    throw InputError("unknown trade command '" + o.kind + "' (simulate|learn)");
  }
  dir.write_json("summary.json", summary);
  std::cout << summary.dump() << "\n";
  return 0;
}

int report_error(const std::string& kind, const std::string& message, const std::string& out, int code) {
  const json err{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << err.dump() << "\n";
  std::error_code ec;
  if (!out.empty() && fs::is_directory(out, ec)) {
    std::ofstream f(fs::path(out) / "error.json");
    if (f) f << err.dump(2) << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  std::locale::global(std::locale::classic());
  CLI::App app{"Exploratory LQG mean field games: solver, experiments and trading loop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Base seed");
    sub->add_option("--steps", o.steps, "Time steps (0: module default)");
    sub->add_option("--horizon", o.horizon, "Horizon (0: module default)");
  };

  auto* solve = app.add_subcommand("solve", "Solve the consistency system");
  solve->add_option("spec", o.input, "Spec JSON")->required();
  add_common(solve);
  solve->add_option("--tol", o.tol, "Picard tolerance");
  solve->add_option("--damping", o.damping, "Picard damping in (0, 1]");

  auto* experiment = app.add_subcommand("experiment", "Run a Monte Carlo or closed-form experiment");
  experiment->add_option("kind", o.kind, "coupling-gap|cost-gap|nash|coe|lambda-sweep|entropy-audit")->required();
  experiment->add_option("spec", o.input, "Spec JSON")->required();
  add_common(experiment);
  experiment->add_option("--tol", o.tol, "Picard tolerance");
  experiment->add_option("--damping", o.damping, "Picard damping in (0, 1]");
  experiment->add_option("--reps", o.reps, "Replications (0: experiment default)");
  experiment->add_option("--Ns", o.Ns, "Comma-separated population sizes");
  experiment->add_option("--lambda-list", o.lambdas, "Comma-separated exploration temperatures");
  experiment->add_option("--family", o.family, "Nash deviation family: default|equilibrium");
  experiment->add_option("--shift", o.shift, "Mean shift of the cost-gap deviation");
  experiment->add_option("--type", o.type, "Type index for coe / lambda-sweep");

  auto* trade = app.add_subcommand("trade", "Market simulation and the learning loop");
  trade->add_option("kind", o.kind, "simulate|learn")->required();
  trade->add_option("params", o.input, "Market parameters JSON (the truth)")->required();
  add_common(trade);
  trade->add_option("--init", o.init, "Initial beliefs JSON for learn (default: the truth)");
  trade->add_option("--traders", o.traders, "Traders per episode");
  trade->add_option("--episodes", o.episodes, "Episodes (simulate) or episodes per acting round (learn)");
  trade->add_option("--iterations", o.iterations, "Model updates (learn)");
  trade->add_option("--repeats", o.repeats, "Planning and acting rounds per model update (learn)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  std::string command;
  for (int i = 0; i < argc; ++i) command += (i ? " " : "") + std::string(argv[i]);
  try {
    if (*solve) return cmd_solve(o, collect_overrides(*solve), command);
    if (*experiment) return cmd_experiment(o, collect_overrides(*experiment), command);
    return cmd_trade(o, collect_overrides(*trade), command);
  } catch (const InputError& e) {
    return report_error("input", e.what(), o.out, 1);
  } catch (const NumericalError& e) {
    return report_error("numerical", e.what(), o.out, 2);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), o.out, 2);
  }
}
