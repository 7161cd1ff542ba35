#pragma once

#include "icjm/deriv.hpp"
#include "icjm/model.hpp"
#include "icjm/optimizer.hpp"

namespace icjm {

struct OuterLoopConfig {
  double outer_tol = 1e-3;  // relative change on all variance components
  int max_outer = 50;
  double dof_floor = 0.5;
  InnerLoopConfig inner;
  bool record_marginal = true;
};

struct OuterTrace {
  int outer_iterations = 0;
  bool converged = false;
  std::vector<double> marginal_path;
  std::vector<Vec> variance_path;
  std::vector<std::string> flags;
};

// effective dimensions nu = tr(F^{-1} Q_.) computed through the kappa
// block-diagonal Schur complement
struct EffectiveDims {
  double nu_eps = 0.0;
  double nu_theta = 0.0;
  Vec nu_alpha;                 // per r
  std::vector<Vec> nu_kappa;    // per r, per l
  bool pd = true;
};

// determinant/trace work happens on the active-constraint-reduced space, the
// same U-matrix reduction used for the sandwich covariance
EffectiveDims effective_dims(const HessianAssembly& A, const ModelSpec& spec,
                             const std::vector<int>& active_theta = {});

// Laplace-approximate marginal log-likelihood Phi(eta-hat) - 0.5 ln|F| (plus
// the sigma-dependent prior normalizers and the Gaussian 2*pi constant over
// the retained directions). Non-PD F falls back to absolute eigenvalues with
// near-zero directions dropped; `warn` is set in that case.
double marginal_loglik(const FitWorkspace& ws, const ParameterState& s,
                       const VarianceComponents& var, const HessianAssembly& A,
                       const std::vector<int>& active_theta = {}, bool* warn = nullptr);
double marginal_loglik(const FitWorkspace& ws, const ParameterState& s,
                       const VarianceComponents& var);

double measurement_ssr(const FitWorkspace& ws, const ParameterState& s);

VarianceComponents update_variances(const FitWorkspace& ws, const ParameterState& s,
                                    const VarianceComponents& var, const HessianAssembly& A,
                                    const OuterLoopConfig& cfg,
                                    const std::vector<int>& active_theta = {},
                                    std::vector<std::string>* flags = nullptr);

struct FitPrecursor {
  ParameterState state;
  VarianceComponents var;
  InnerLoopTrace inner;
  OuterTrace outer;
  std::vector<int> active_set;
  Vec g_theta;  // gradient at the final state, for diagnostics
  HessianAssembly hess;
  bool converged = false;
};

FitPrecursor run_outer(const FitWorkspace& ws, const OuterLoopConfig& cfg);
// warm start from explicit parameters and variance components
FitPrecursor run_outer(const FitWorkspace& ws, const OuterLoopConfig& cfg,
                       const ParameterState& state0, const VarianceComponents& var0);

}  // namespace icjm
