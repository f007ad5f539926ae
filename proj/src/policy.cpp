#include "emfg/policy.hpp"

#include <cmath>
#include <numbers>

namespace emfg {

namespace {

const SubpopParams& params(const PopulationSpec& spec, Eigen::Index k) {
  if (k < 0 || k >= spec.K()) throw InputError("policy: type index out of range");
  return spec.subpops[static_cast<std::size_t>(k)];
}

double log_det_scaled_inverse(const SubpopParams& p, double scale) {
  // ln det(scale R^-1) = m ln(scale) - ln det R
  const double logdetR = p.R.ldlt().vectorD().array().log().sum();
  return static_cast<double>(p.m()) * std::log(scale) - logdetR;
}

void require_positive_rho(const PopulationSpec& spec) {
  if (!(spec.rho > 0.0)) throw InputError("discount rho must be > 0");
}

}  // namespace

ControlLaw::ControlLaw(const PopulationSpec& spec, const MeanFieldSolution& mf, Eigen::Index k)
    : spec_(spec), mf_(mf), k_(k) {
  const auto& p = params(spec, k);
  if (static_cast<Eigen::Index>(mf.Pi.size()) != spec.K()) throw InputError("policy: solution does not match spec");
  const auto R = p.R.ldlt();
  const MatrixXd& Pi = mf.Pi[static_cast<std::size_t>(k)].Pi;
  gain_ = -R.solve(p.B.transpose() * Pi + p.S.transpose());
  from_xbar_ = R.solve(p.S.transpose()) * spec.psibar(k);
}

VectorXd ControlLaw::offset(double t) const {
  const auto& p = spec_.subpops[static_cast<std::size_t>(k_)];
  const VectorXd s = mf_.s[static_cast<std::size_t>(k_)].smooth_at(t);
  return -p.R.ldlt().solve(p.B.transpose() * s + p.nvec) + from_xbar_ * mf_.xbar.smooth_at(t);
}

VectorXd classical_control(double t, const VectorXd& x, const MeanFieldSolution& mf, const PopulationSpec& spec,
                           Eigen::Index k) {
  if (x.size() != spec.n()) throw InputError("policy: state has wrong dimension");
  return ControlLaw(spec, mf, k)(t, x);
}

MatrixXd exploration_covariance(const PopulationSpec& spec, Eigen::Index k) {
  const auto& p = params(spec, k);
  if (p.lambda_explore < 0.0) throw InputError("policy: lambda must be >= 0");
  const MatrixXd cov = p.lambda_explore * p.R.inverse();
  return 0.5 * (cov + cov.transpose());
}

GaussianAction exploratory_policy(double t, const VectorXd& x, const MeanFieldSolution& mf,
                                  const PopulationSpec& spec, Eigen::Index k) {
  return {classical_control(t, x, mf, spec, k), exploration_covariance(spec, k)};
}

VectorXd sample_action(const GaussianAction& a, Rng& rng) { return sample_gaussian(a.mean, a.covariance, rng); }

double gaussian_density(const VectorXd& u, const VectorXd& mean, const MatrixXd& cov) {
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw InputError("gaussian density: covariance not positive definite");
  const VectorXd z = llt.matrixL().solve(u - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = static_cast<double>(u.size());
  return std::exp(-0.5 * z.squaredNorm() - 0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet));
}

double policy_entropy(Eigen::Index k, const PopulationSpec& spec) {
  const auto& p = params(spec, k);
  if (!(p.lambda_explore > 0.0)) throw InputError("entropy undefined (Dirac)");
  return 0.5 * log_det_scaled_inverse(p, 2.0 * std::numbers::pi * std::numbers::e * p.lambda_explore);
}

double analytic_coe(Eigen::Index k, const PopulationSpec& spec) {
  const auto& p = params(spec, k);
  require_positive_rho(spec);
  return static_cast<double>(p.m()) * p.lambda_explore / (2.0 * spec.rho);
}

double value_gap(Eigen::Index k, const PopulationSpec& spec) {
  const auto& p = params(spec, k);
  require_positive_rho(spec);
  if (!(p.lambda_explore > 0.0)) throw InputError("value gap: lambda must be > 0");
  const double lam = p.lambda_explore;
  return lam / (2.0 * spec.rho) *
         (log_det_scaled_inverse(p, 2.0 * std::numbers::pi * lam) - static_cast<double>(p.m()));
}

double value_gap_direct(Eigen::Index k, const PopulationSpec& spec) {
  const auto& p = params(spec, k);
  require_positive_rho(spec);
  if (!(p.lambda_explore > 0.0)) throw InputError("value gap: lambda must be > 0");
  return -analytic_coe(k, spec) - discounted_log_density_term(k, spec);
}

double discounted_log_density_term(Eigen::Index k, const PopulationSpec& spec) {
  const auto& p = params(spec, k);
  require_positive_rho(spec);
  return -p.lambda_explore / spec.rho * policy_entropy(k, spec);
}

}  // namespace emfg
