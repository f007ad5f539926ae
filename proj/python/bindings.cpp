#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "emfg/simulator.hpp"
#include "emfg/trading.hpp"

namespace py = pybind11;
using namespace emfg;

namespace {

// Specs and results cross the boundary as JSON text; the Python side wraps
// them with json.loads / json.dumps.
PopulationSpec parse_spec(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("spec is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

MarketParams parse_market(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("market parameters are not valid JSON: ") + e.what());
  }
  return market_from_json(j);
}

MeanFieldSolution solve_with(const PopulationSpec& spec, double horizon, double tol, double damping) {
  SolverConfig cfg;
  cfg.horizon = horizon;
  cfg.tol = tol;
  cfg.damping = damping;
  return solve_consistency(spec, cfg);
}

std::string rows_to_csv(const std::vector<CsvRow>& rows) {
  std::ostringstream out;
  write_csv(out, rows);
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exploratory LQG mean field games";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "validate_spec",
      [](const std::string& text) {
        const auto report = validate_spec(parse_spec(text));
        std::vector<std::string> messages;
        for (const auto& v : report.violations) messages.push_back(v.assumption + ": " + v.message);
        return py::make_tuple(report.ok, messages);
      },
      py::arg("spec_json"));

  m.def(
      "solve_are",
      [](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
         std::optional<Eigen::MatrixXd> S, double rho) {
        SubpopParams p = SubpopParams::zeros(A.rows(), B.cols(), 1);
        p.A = A;
        p.B = B;
        p.Q = Q;
        p.R = R;
        if (S) p.S = *S;
        const auto sol = solve_discounted_are(p, rho);
        return py::make_tuple(sol.Pi, sol.residual);
      },
      py::arg("A"), py::arg("B"), py::arg("Q"), py::arg("R"), py::arg("S") = py::none(), py::arg("rho") = 0.0);

  m.def(
      "solve",
      [](const std::string& spec_json, double horizon, double tol, double damping, int stride) {
        const auto spec = parse_spec(spec_json);
        py::gil_scoped_release release;
        const auto mf = solve_with(spec, horizon, tol, damping);
        auto j = solution_to_json(mf, stride);
        j["checker_residual"] = consistency_residual(mf, spec);
        return j.dump();
      },
      py::arg("spec_json"), py::arg("horizon") = 0.0, py::arg("tol") = 1e-10, py::arg("damping") = 0.5,
      py::arg("stride") = 1);

  m.def(
      "closed_forms",
      [](const std::string& spec_json, int k) {
        const auto spec = parse_spec(spec_json);
        py::dict d;
        d["entropy"] = policy_entropy(k, spec);
        d["coe"] = analytic_coe(k, spec);
        d["value_gap"] = value_gap(k, spec);
        d["value_gap_direct"] = value_gap_direct(k, spec);
        d["exploration_covariance"] = exploration_covariance(spec, k);
        return d;
      },
      py::arg("spec_json"), py::arg("k") = 0);

  m.def(
      "simulate_means",
      [](const std::string& spec_json, long agents, double horizon, int steps, std::uint64_t seed, bool exploratory) {
        const auto spec = parse_spec(spec_json);
        SimulationBatch batch;
        Trajectory xbar;
        {
          py::gil_scoped_release release;
          const auto mf = solve_with(spec, horizon, 1e-10, 0.5);
          SimConfig cfg;
          cfg.counts = proportional_counts(spec.pi, agents);
          cfg.grid = TimeGrid(0.0, horizon, steps);
          cfg.seed = seed;
          cfg.mode = exploratory ? SimMode::kExploratory : SimMode::kClassical;
          cfg.record_stride = steps;
          batch = simulate_population(spec, mf, cfg);
          xbar = mf.xbar;
        }
        Eigen::MatrixXd empirical(static_cast<Eigen::Index>(batch.xbar.size()), batch.xbar.front().size());
        Eigen::MatrixXd limit(empirical.rows(), empirical.cols());
        Eigen::VectorXd t(empirical.rows());
        for (Eigen::Index i = 0; i < empirical.rows(); ++i) {
          t(i) = batch.grid.at(static_cast<int>(i));
          empirical.row(i) = batch.xbar[static_cast<std::size_t>(i)].transpose();
          limit.row(i) = xbar.at(t(i)).transpose();
        }
        return py::make_tuple(t, empirical, limit);
      },
      py::arg("spec_json"), py::arg("agents"), py::arg("horizon") = 5.0, py::arg("steps") = 500,
      py::arg("seed") = 0, py::arg("exploratory") = true);

  m.def(
      "coe_experiment",
      [](const std::string& spec_json, int k, int reps, std::uint64_t seed, double horizon, double dt) {
        const auto spec = parse_spec(spec_json);
        py::gil_scoped_release release;
        const auto mf = solve_with(spec, horizon, 1e-10, 0.5);
        const auto r = coe_experiment(spec, mf, k, reps, seed, {.horizon = horizon, .dt = dt});
        return std::make_tuple(r.estimate, r.std_err, r.analytic, rows_to_csv(r.rows));
      },
      py::arg("spec_json"), py::arg("k") = 0, py::arg("reps") = 1000, py::arg("seed") = 0, py::arg("horizon") = 50.0,
      py::arg("dt") = 0.05);

  m.def(
      "coupling_gap_experiment",
      [](const std::string& spec_json, std::vector<long> Ns, int reps, std::uint64_t seed, double horizon, double dt) {
        const auto spec = parse_spec(spec_json);
        py::gil_scoped_release release;
        const auto mf = solve_with(spec, horizon, 1e-10, 0.5);
        const auto r = coupling_gap_experiment(spec, mf, Ns, reps, seed, {.horizon = horizon, .dt = dt});
        return std::make_tuple(r.value, r.std_err, r.slope, rows_to_csv(r.rows));
      },
      py::arg("spec_json"), py::arg("Ns"), py::arg("reps") = 16, py::arg("seed") = 0, py::arg("horizon") = 10.0,
      py::arg("dt") = 0.01);

  m.def("default_market", [] { return market_to_json(MarketParams{}).dump(); });

  m.def(
      "rl_loop",
      [](const std::string& truth_json, const std::string& init_json, int iterations, long traders, int steps,
         int inner_repeats, std::uint64_t seed) {
        const auto truth = parse_market(truth_json);
        const auto init = parse_market(init_json);
        EpisodeConfig cfg;
        cfg.traders = traders;
        cfg.steps = steps;
        cfg.inner_repeats = inner_repeats;
        cfg.seed = seed;
        py::gil_scoped_release release;
        return trace_to_json(rl_loop(truth, init, iterations, cfg)).dump();
      },
      py::arg("truth_json"), py::arg("init_json"), py::arg("iterations") = 5, py::arg("traders") = 20,
      py::arg("steps") = 200, py::arg("inner_repeats") = 5, py::arg("seed") = 0);
}
