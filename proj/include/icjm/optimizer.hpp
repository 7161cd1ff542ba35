#pragma once

#include "icjm/deriv.hpp"
#include "icjm/model.hpp"

namespace icjm {

struct InnerLoopConfig {
  double tol = 1e-5;
  int max_iter = 500;
  double armijo_contraction = 0.5;
  double armijo_slope = 1e-4;
  int armijo_max_backtracks = 30;
  double mi_upsilon = 1e-3;
  int max_zero_escapes = 5;
  bool joint_zeta_step = true;
};

struct InnerLoopTrace {
  int iterations = 0;
  std::vector<double> objective_path;  // after each full cycle
  bool converged = false;
  std::vector<int> active_set;
  int line_search_failures = 0;
  bool ridge_applied = false;
};

// cyclic sub-updates; each returns the Phi value after the step and keeps
// theta >= 0 and Phi non-decreasing
double update_beta(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                   const InnerLoopConfig& cfg, double phi_now, bool* ridge_flag = nullptr);
double update_gamma(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now);
double update_theta(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now);
double update_alpha(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now);
double update_kappa(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now);
// joint modified-Newton polish over all of eta, solved through the kappa
// block-diagonal arrow structure; resolves the slow crawl the one-block cycle
// exhibits along gamma-baseline and alpha-kappa ridges (theta clipped at zero
// inside the line search)
double update_joint(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now);

std::pair<ParameterState, InnerLoopTrace> run_inner(const FitWorkspace& ws,
                                                    const ParameterState& start,
                                                    const VarianceComponents& var,
                                                    const InnerLoopConfig& cfg);

// active set B = { u : theta_u < 1e-2 and g_theta_u < -1e-2 }
std::vector<int> detect_active(const ParameterState& s, const Vec& g_theta);

// beta = gamma = 0, flat positive theta scaled to the crude event rate,
// alpha from least squares of the observations on the fixed design, kappa = 0
ParameterState initial_state(const FitWorkspace& ws);
// sigma_eps^2 from the alpha-only least-squares residuals, sigma_kappa^2 a
// quarter of that, prior variances such that lambda = 1
VarianceComponents initial_variances(const FitWorkspace& ws, const ParameterState& s);

}  // namespace icjm
