#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace emfg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Bad input: malformed spec, dimension mismatch, out-of-range index.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (divergence, blow-up, singular system).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic vector-valued function of time, linear between knots and
/// held constant outside them. A single knot is a constant.
class TimeTable {
 public:
  TimeTable() = default;
  explicit TimeTable(VectorXd constant);
  TimeTable(std::vector<double> times, std::vector<VectorXd> values);

  VectorXd operator()(double t) const;
  bool is_constant() const { return values_.size() <= 1; }
  Eigen::Index dim() const { return values_.empty() ? 0 : values_.front().size(); }

  const std::vector<double>& times() const { return times_; }
  const std::vector<VectorXd>& values() const { return values_; }

 private:
  std::vector<double> times_;
  std::vector<VectorXd> values_;
};

/// Parameters shared by every agent of one sub-population (type).
struct SubpopParams {
  MatrixXd A;    // n x n
  MatrixXd B;    // n x m
  MatrixXd F;    // n x n base block of the mean-state coupling
  MatrixXd H;    // n x m base block of the mean-control coupling
  MatrixXd D;    // n x r
  TimeTable b;   // n
  MatrixXd Q;    // n x n
  MatrixXd R;    // m x m
  MatrixXd S;    // n x m
  VectorXd eta;  // n
  VectorXd nvec; // m
  MatrixXd psi;  // n x n base block of the tracking target
  double lambda_explore = 0.0;
  double phi_lagrange = 0.0;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }

  /// Scalar/zero-filled parameter block of the given dimensions.
  static SubpopParams zeros(Eigen::Index n, Eigen::Index m, Eigen::Index r);
};

struct PopulationSpec {
  std::vector<SubpopParams> subpops;
  VectorXd pi;
  double rho = 0.0;
  VectorXd x0_mean;
  MatrixXd x0_cov;

  Eigen::Index K() const { return static_cast<Eigen::Index>(subpops.size()); }
  Eigen::Index n() const { return subpops.empty() ? 0 : subpops.front().n(); }
  Eigen::Index m() const { return subpops.empty() ? 0 : subpops.front().m(); }

  /// F_k (x) [pi_1 ... pi_K], n x nK.
  MatrixXd Fbar(Eigen::Index k) const;
  /// H_k (x) [pi_1 ... pi_K], n x mK.
  MatrixXd Hbar(Eigen::Index k) const;
  /// psi_k (x) [pi_1 ... pi_K], n x nK.
  MatrixXd psibar(Eigen::Index k) const;
};

struct Violation {
  std::string assumption;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;
};

/// Checks every assumption that can be checked from the parameters alone:
/// dimensions, R > 0, Q - S R^-1 S^T >= 0, lambda >= 0, pi on the simplex,
/// rho > 0, x0_cov >= 0. Stability conditions are checked by the solvers.
ValidationReport validate_spec(const PopulationSpec& spec);

/// pi^N_k = N_k / N. Throws InputError for negative or all-zero counts.
VectorXd mixture_weights(const std::vector<long>& counts);

/// n x nK block row with I_n in block k (1-based, as in the block notation).
MatrixXd selector_matrix(Eigen::Index k, Eigen::Index n, Eigen::Index K);

/// M (x) w^T for a row vector of weights w, i.e. [w_1 M, ..., w_K M].
MatrixXd expand_blocks(const MatrixXd& M, const VectorXd& w);

/// Eigenvalue floor used for PSD/PD decisions: -1e-10 (1 + ||M||).
double psd_floor(const MatrixXd& M);
bool is_symmetric(const MatrixXd& M, double rel_tol = 1e-10);
bool is_psd(const MatrixXd& M);
bool is_pd(const MatrixXd& M);

// JSON (row-major nested arrays for matrices).
nlohmann::json matrix_to_json(const MatrixXd& M);
MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json spec_to_json(const PopulationSpec& spec);
PopulationSpec spec_from_json(const nlohmann::json& j);
PopulationSpec load_spec(const std::string& path);

}  // namespace emfg
