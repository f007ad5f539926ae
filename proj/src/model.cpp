#include "emfg/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace emfg {

TimeTable::TimeTable(VectorXd constant) : times_{0.0}, values_{std::move(constant)} {}

TimeTable::TimeTable(std::vector<double> times, std::vector<VectorXd> values)
    : times_(std::move(times)), values_(std::move(values)) {
  if (times_.size() != values_.size() || times_.empty()) {
    throw InputError("time table: times and values must be non-empty and of equal length");
  }
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) throw InputError("time table: times must be increasing");
    if (values_[i].size() != values_[0].size()) throw InputError("time table: ragged values");
  }
}

VectorXd TimeTable::operator()(double t) const {
  if (values_.empty()) return VectorXd();
  if (values_.size() == 1 || t <= times_.front()) return values_.front();
  if (t >= times_.back()) return values_.back();
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const auto i = static_cast<std::size_t>(it - times_.begin());
  const double w = (t - times_[i - 1]) / (times_[i] - times_[i - 1]);
  return (1.0 - w) * values_[i - 1] + w * values_[i];
}

SubpopParams SubpopParams::zeros(Eigen::Index n, Eigen::Index m, Eigen::Index r) {
  SubpopParams p;
  p.A = MatrixXd::Zero(n, n);
  p.B = MatrixXd::Zero(n, m);
  p.F = MatrixXd::Zero(n, n);
  p.H = MatrixXd::Zero(n, m);
  p.D = MatrixXd::Zero(n, r);
  p.b = TimeTable(VectorXd::Zero(n));
  p.Q = MatrixXd::Zero(n, n);
  p.R = MatrixXd::Identity(m, m);
  p.S = MatrixXd::Zero(n, m);
  p.eta = VectorXd::Zero(n);
  p.nvec = VectorXd::Zero(m);
  p.psi = MatrixXd::Zero(n, n);
  return p;
}

MatrixXd expand_blocks(const MatrixXd& M, const VectorXd& w) {
  MatrixXd out(M.rows(), M.cols() * w.size());
  for (Eigen::Index k = 0; k < w.size(); ++k) out.middleCols(k * M.cols(), M.cols()) = w(k) * M;
  return out;
}

MatrixXd PopulationSpec::Fbar(Eigen::Index k) const { return expand_blocks(subpops.at(k).F, pi); }
MatrixXd PopulationSpec::Hbar(Eigen::Index k) const { return expand_blocks(subpops.at(k).H, pi); }
MatrixXd PopulationSpec::psibar(Eigen::Index k) const { return expand_blocks(subpops.at(k).psi, pi); }

MatrixXd selector_matrix(Eigen::Index k, Eigen::Index n, Eigen::Index K) {
  if (k < 1 || k > K || n < 1) {
    throw InputError("selector_matrix: index " + std::to_string(k) + " out of range 1.." +
                     std::to_string(K));
  }
  MatrixXd e = MatrixXd::Zero(n, n * K);
  e.middleCols((k - 1) * n, n).setIdentity();
  return e;
}

VectorXd mixture_weights(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) {
    if (c < 0) throw InputError("mixture_weights: negative count");
    total += c;
  }
  if (total == 0) throw InputError("mixture_weights: empty population");
  VectorXd pi(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t k = 0; k < counts.size(); ++k) {
    pi(static_cast<Eigen::Index>(k)) = static_cast<double>(counts[k]) / static_cast<double>(total);
  }
  return pi;
}

double psd_floor(const MatrixXd& M) { return -1e-10 * (1.0 + M.norm()); }

bool is_symmetric(const MatrixXd& M, double rel_tol) {
  if (M.rows() != M.cols()) return false;
  return (M - M.transpose()).norm() <= rel_tol * (1.0 + M.norm());
}

namespace {

double min_sym_eigenvalue(const MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

bool is_psd(const MatrixXd& M) { return is_symmetric(M) && min_sym_eigenvalue(M) >= psd_floor(M); }

bool is_pd(const MatrixXd& M) {
  return is_symmetric(M) && min_sym_eigenvalue(M) > -psd_floor(M);
}

ValidationReport validate_spec(const PopulationSpec& spec) {
  ValidationReport rep;
  auto fail = [&rep](std::string id, std::string msg) {
    rep.violations.push_back({std::move(id), std::move(msg)});
  };

  const Eigen::Index K = spec.K();
  if (K == 0) fail("dimensions", "no sub-populations");
  if (spec.pi.size() != K) {
    fail("dimensions", "pi has " + std::to_string(spec.pi.size()) + " entries, expected " +
                           std::to_string(K));
  } else if (K > 0) {
    if ((spec.pi.array() < 0.0).any()) fail("A2", "mixture weights must be nonnegative");
    if (std::abs(spec.pi.sum() - 1.0) > 1e-12) fail("A2", "mixture weights sum != 1");
  }
  if (!(spec.rho > 0.0)) fail("rho", "discount rho must be > 0");

  const Eigen::Index n = spec.n();
  const Eigen::Index m = spec.m();
  if (spec.x0_mean.size() != n) fail("dimensions", "x0_mean has wrong length");
  if (spec.x0_cov.rows() != n || spec.x0_cov.cols() != n) {
    fail("dimensions", "x0_cov must be n x n");
  } else if (!is_psd(spec.x0_cov)) {
    fail("A1", "x0_cov not symmetric positive semidefinite");
  }

  for (Eigen::Index k = 0; k < K; ++k) {
    const auto& p = spec.subpops[static_cast<std::size_t>(k)];
    const std::string tag = "type " + std::to_string(k + 1) + ": ";
    bool dims_ok = p.A.rows() == n && p.A.cols() == n && p.B.rows() == n && p.B.cols() == m &&
                   p.F.rows() == n && p.F.cols() == n && p.H.rows() == n && p.H.cols() == m &&
                   p.D.rows() == n && p.b.dim() == n && p.Q.rows() == n && p.Q.cols() == n &&
                   p.R.rows() == m && p.R.cols() == m && p.S.rows() == n && p.S.cols() == m &&
                   p.eta.size() == n && p.nvec.size() == m && p.psi.rows() == n &&
                   p.psi.cols() == n;
    if (!dims_ok) {
      fail("dimensions", tag + "matrix dimensions inconsistent");
      continue;
    }
    if (!(p.lambda_explore >= 0.0)) fail("lambda", tag + "lambda_explore must be >= 0");
    if (!is_pd(p.R)) {
      fail("A3", tag + "R not positive definite");
      continue;
    }
    if (!is_symmetric(p.Q)) fail("A3", tag + "Q not symmetric");
    const MatrixXd schur = p.Q - p.S * p.R.ldlt().solve(p.S.transpose());
    if (!is_psd(schur)) fail("A3", tag + "Q - S R^-1 S^T not positive semidefinite");
  }
  rep.ok = rep.violations.empty();
  return rep;
}

// ---------------------------------------------------------------- JSON

nlohmann::json matrix_to_json(const MatrixXd& M) {
  auto j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    j.push_back(std::move(row));
  }
  return j;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (j.is_number()) return MatrixXd::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw InputError("matrix: expected a non-empty nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].is_array() ? j[0].size() : 0);
  if (cols == 0) throw InputError("matrix: expected nested rows");
  MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InputError("matrix: ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) M(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return M;
}

nlohmann::json vector_to_json(const VectorXd& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

VectorXd vector_from_json(const nlohmann::json& j) {
  if (j.is_number()) return VectorXd::Constant(1, j.get<double>());
  if (!j.is_array()) throw InputError("vector: expected an array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

namespace {

nlohmann::json table_to_json(const TimeTable& tt) {
  if (tt.is_constant()) return vector_to_json(tt.values().empty() ? VectorXd() : tt.values()[0]);
  nlohmann::json j;
  j["times"] = tt.times();
  auto vals = nlohmann::json::array();
  for (const auto& v : tt.values()) vals.push_back(vector_to_json(v));
  j["values"] = vals;
  return j;
}

TimeTable table_from_json(const nlohmann::json& j) {
  if (j.is_object()) {
    std::vector<VectorXd> vals;
    for (const auto& v : j.at("values")) vals.push_back(vector_from_json(v));
    return TimeTable(j.at("times").get<std::vector<double>>(), std::move(vals));
  }
  return TimeTable(vector_from_json(j));
}

}  // namespace

nlohmann::json spec_to_json(const PopulationSpec& spec) {
  nlohmann::json j;
  j["rho"] = spec.rho;
  j["pi"] = vector_to_json(spec.pi);
  j["x0_mean"] = vector_to_json(spec.x0_mean);
  j["x0_cov"] = matrix_to_json(spec.x0_cov);
  auto subs = nlohmann::json::array();
  for (const auto& p : spec.subpops) {
    nlohmann::json s;
    s["A"] = matrix_to_json(p.A);
    s["B"] = matrix_to_json(p.B);
    s["F"] = matrix_to_json(p.F);
    s["H"] = matrix_to_json(p.H);
    s["D"] = matrix_to_json(p.D);
    s["b"] = table_to_json(p.b);
    s["Q"] = matrix_to_json(p.Q);
    s["R"] = matrix_to_json(p.R);
    s["S"] = matrix_to_json(p.S);
    s["eta"] = vector_to_json(p.eta);
    s["nvec"] = vector_to_json(p.nvec);
    s["psi"] = matrix_to_json(p.psi);
    s["lambda_explore"] = p.lambda_explore;
    s["phi_lagrange"] = p.phi_lagrange;
    subs.push_back(std::move(s));
  }
  j["subpops"] = subs;
  return j;
}

PopulationSpec spec_from_json(const nlohmann::json& j) {
  try {
    PopulationSpec spec;
    spec.rho = j.at("rho").get<double>();
    spec.pi = vector_from_json(j.at("pi"));
    spec.x0_mean = vector_from_json(j.at("x0_mean"));
    spec.x0_cov = matrix_from_json(j.at("x0_cov"));
    for (const auto& s : j.at("subpops")) {
      SubpopParams p;
      p.A = matrix_from_json(s.at("A"));
      p.B = matrix_from_json(s.at("B"));
      const auto n = p.A.rows();
      const auto m = p.B.cols();
      // Optional blocks default to zero; the rest are required.
      p.F = s.contains("F") ? matrix_from_json(s["F"]) : MatrixXd::Zero(n, n);
      p.H = s.contains("H") ? matrix_from_json(s["H"]) : MatrixXd::Zero(n, m);
      p.D = s.contains("D") ? matrix_from_json(s["D"]) : MatrixXd::Zero(n, 1);
      p.b = s.contains("b") ? table_from_json(s["b"]) : TimeTable(VectorXd::Zero(n));
      p.Q = matrix_from_json(s.at("Q"));
      p.R = matrix_from_json(s.at("R"));
      p.S = s.contains("S") ? matrix_from_json(s["S"]) : MatrixXd::Zero(n, m);
      p.eta = s.contains("eta") ? vector_from_json(s["eta"]) : VectorXd::Zero(n);
      p.nvec = s.contains("nvec") ? vector_from_json(s["nvec"]) : VectorXd::Zero(m);
      p.psi = s.contains("psi") ? matrix_from_json(s["psi"]) : MatrixXd::Zero(n, n);
      p.lambda_explore = s.value("lambda_explore", 0.0);
      p.phi_lagrange = s.value("phi_lagrange", 0.0);
      spec.subpops.push_back(std::move(p));
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("spec json: ") + e.what());
  }
}

PopulationSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open spec file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("spec file " + path + ": " + e.what());
  }
  return spec_from_json(j);
}

}  // namespace emfg
