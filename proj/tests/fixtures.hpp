#pragma once

#include "emfg/model.hpp"

namespace emfg::testing {

inline MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

/// Single-type scalar spec: A=0, B=1, Q=1, R=1, everything else zero.
inline PopulationSpec scalar_spec(double rho = 0.5) {
  PopulationSpec spec;
  SubpopParams p = SubpopParams::zeros(1, 1, 1);
  p.Q = scalar(1.0);
  p.B = scalar(1.0);
  spec.subpops.push_back(p);
  spec.pi = VectorXd::Ones(1);
  spec.rho = rho;
  spec.x0_mean = VectorXd::Ones(1);
  spec.x0_cov = MatrixXd::Zero(1, 1);
  return spec;
}

/// Two coupled scalar types with every cost and coupling term switched on.
inline PopulationSpec coupled_two_type_spec() {
  PopulationSpec spec;
  SubpopParams a = SubpopParams::zeros(1, 1, 1);
  a.A = scalar(0.1);
  a.B = scalar(1.0);
  a.F = scalar(0.2);
  a.H = scalar(0.1);
  a.D = scalar(0.3);
  a.Q = scalar(1.0);
  a.R = scalar(1.0);
  a.S = scalar(0.1);
  a.psi = scalar(0.5);
  a.eta = VectorXd::Constant(1, 0.1);
  a.b = TimeTable(VectorXd::Constant(1, 0.2));
  a.lambda_explore = 0.2;

  SubpopParams b = SubpopParams::zeros(1, 1, 1);
  b.A = scalar(-0.2);
  b.B = scalar(0.8);
  b.F = scalar(0.1);
  b.H = scalar(0.2);
  b.D = scalar(0.2);
  b.Q = scalar(2.0);
  b.R = scalar(0.5);
  b.psi = scalar(0.3);
  b.eta = VectorXd::Constant(1, -0.1);
  b.nvec = VectorXd::Constant(1, 0.05);
  b.b = TimeTable(VectorXd::Constant(1, -0.1));
  b.lambda_explore = 0.1;

  spec.subpops = {a, b};
  spec.pi = (VectorXd(2) << 0.6, 0.4).finished();
  spec.rho = 0.5;
  spec.x0_mean = VectorXd::Ones(1);
  spec.x0_cov = scalar(0.04);
  return spec;
}

/// One coupled scalar type: mean-state, mean-control and tracking coupling.
inline PopulationSpec coupled_single_type_spec() {
  PopulationSpec spec;
  SubpopParams p = SubpopParams::zeros(1, 1, 1);
  p.A = scalar(0.1);
  p.B = scalar(1.0);
  p.F = scalar(0.3);
  p.H = scalar(0.2);
  p.D = scalar(0.3);
  p.Q = scalar(1.0);
  p.R = scalar(1.0);
  p.psi = scalar(0.5);
  p.b = TimeTable(VectorXd::Constant(1, 0.1));
  p.lambda_explore = 0.2;
  spec.subpops.push_back(p);
  spec.pi = VectorXd::Ones(1);
  spec.rho = 0.5;
  spec.x0_mean = VectorXd::Ones(1);
  spec.x0_cov = scalar(0.04);
  return spec;
}

}  // namespace emfg::testing
