#pragma once

#include "icjm/model.hpp"

namespace icjm {

struct ScoreBlocks {
  Vec beta, gamma, theta;
  std::vector<Vec> alpha;  // per r
  std::vector<Vec> kappa;  // per subject, c_total
  Vec flatten(const ModelSpec& spec) const;
};

// analytic gradient of the penalised objective, all five blocks
ScoreBlocks score(const FitWorkspace& ws, const ParameterState& s,
                  const VarianceComponents& var);

// MI denominators d_u = [g_theta,u]^- + upsilon
Vec mi_denominators(const Vec& g_theta, double upsilon = 1e-3);

// term-collected MI denominators: the cumulative-hazard terms that enter the
// theta gradient negatively plus the positive part of the penalty gradient;
// always >= [g_theta]^- so the multiplicative update stays feasible, and
// scaled like the local curvature so near-stationary coordinates take sane
// steps
Vec mi_denominators_structural(const FitWorkspace& ws, const ParameterState& s,
                               const VarianceComponents& var);

// per-subject beta-update weights: a_i multiplies the gradient X'(delta - a),
// c_i is the negative curvature weight in X' diag(c) X
struct BetaWeights {
  Vec a, c, delta;
};
BetaWeights beta_weights(const FitWorkspace& ws, const ParameterState& s);

// Hessian blocks of Phi used by the block Newton updates
Mat hess_gamma(const FitWorkspace& ws, const ParameterState& s);
Mat hess_alpha(const FitWorkspace& ws, const ParameterState& s, const VarianceComponents& var);
std::vector<Mat> hess_kappa(const FitWorkspace& ws, const ParameterState& s,
                            const VarianceComponents& var);
// joint Hessian of Phi over zeta = (beta, gamma, theta, alpha) with kappa held
Mat hess_zeta(const FitWorkspace& ws, const ParameterState& s, const VarianceComponents& var);

// Full negative Hessian F_eta of Phi in the decomposition
//   F = H_eta + Q_theta + sum_r Q_alpha_r + Q_eps + sum_lr Q_kappa_lr
// stored blockwise: zeta rows dense, kappa block-diagonal over subjects.
struct HessianAssembly {
  int dim_z = 0;  // zeta dimension
  int ck = 0;     // per-subject kappa dimension
  int n = 0;

  Mat F_zz;
  Mat F_zk;               // dim_z x (n*ck)
  std::vector<Mat> F_kk;  // per subject

  Mat Qtheta_zz;                 // R_theta / sigma_theta^2 embedded
  std::vector<Mat> Qalpha_each;  // per r, embedded in the zeta block
  // measurement Grams (unscaled; Q_eps = G / sigma_eps^2)
  Mat Ge_zz;
  Mat Ge_zk;
  std::vector<Mat> Ge_kk;
  double sigma_eps2 = 1.0;
  Vec kappa_prec;  // per-coordinate prior precision 1/sigma_lr^2, length ck

  Mat dense() const;                  // full F_eta
  Mat dense_loglik_hessian() const;   // -d2 l (F minus the roughness penalty blocks)
  Mat dense_survival_part() const;    // H_eta alone
  Mat dense_Qeps() const;
  Mat dense_Qkappa(int r_block_coord) const;  // selector for a (r,l) coordinate
};

HessianAssembly negative_hessian(const FitWorkspace& ws, const ParameterState& s,
                                 const VarianceComponents& var);

// central finite-difference verification of the analytic derivatives,
// step 1e-6 * (1 + |param|) per coordinate
struct DerivCheckRow {
  std::string block;
  double max_err = 0.0;  // |analytic - fd| / max(|analytic|, |fd|), 1e-8 abs floor
  bool pass = true;
};

struct DerivCheckReport {
  std::vector<DerivCheckRow> rows;
  bool pass = true;
};

DerivCheckReport check_score(const FitWorkspace& ws, const ParameterState& s,
                             const VarianceComponents& var, double tol = 1e-5);
DerivCheckReport check_hessian(const FitWorkspace& ws, const ParameterState& s,
                               const VarianceComponents& var, double tol = 1e-4);

}  // namespace icjm
