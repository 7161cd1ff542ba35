#pragma once

#include <functional>

#include "icjm/variance.hpp"

namespace icjm {

struct FitResult {
  ModelSpec spec;
  ParameterState state;
  VarianceComponents var;
  Mat covariance;  // over zeta = (beta, gamma, theta, alpha); zeros at active rows
  std::vector<int> active_set;
  bool converged = false;
  int inner_iterations = 0;
  int outer_iterations = 0;
  std::vector<double> objective_path;
  std::vector<std::string> flags;
  double penalised_loglik = 0.0;
  double marginal_loglik = 0.0;
  // provenance
  std::string tool_version;
  std::uint64_t seed = 0;
  std::uint64_t data_digest = 0;
  std::uint64_t spec_digest = 0;
  std::uint64_t config_digest = 0;
  // subject covariates kept for individual-level prediction
  std::vector<std::string> subject_ids;
  std::vector<Vec> subject_x;
  std::vector<Vec> subject_w;

  std::vector<std::string> zeta_names() const { return spec.zeta_names(); }
  Vec zeta() const;  // flattened (beta, gamma, theta, alpha)
};

// Sandwich covariance of zeta with active constraints removed and zeroed back
// in: A^{-1} (-d2 l) A^{-1} with A = U'FU. Throws when U'FU is singular.
Mat sandwich_covariance(const HessianAssembly& A, const std::vector<int>& active_theta,
                        const ModelSpec& spec);

FitResult make_fit_result(const FitWorkspace& ws, const FitPrecursor& pre,
                          std::uint64_t seed, std::uint64_t config_digest);

struct WaldResult {
  double estimate = 0.0, se = 0.0, z = 0.0, p = 1.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  bool degenerate = false;  // zero se (e.g. actively constrained entry)
};

WaldResult wald(const FitResult& fit, int zeta_index);
WaldResult wald_contrast(const FitResult& fit, const Vec& contrast);

struct SurvivalCurve {
  std::vector<double> t, s, lo, hi;
};

struct TrajectoryCurve {
  std::vector<double> t;
  Mat values;  // grid x q
};

// Population/fixed-trajectory survival prediction with delta-method pointwise
// 95% bands on the log cumulative hazard scale. The band covers fixed-effect
// uncertainty only (no random effects).
SurvivalCurve predict_survival(const FitResult& fit, const Vec& x,
                               const std::function<Vec(double)>& trajectory,
                               const std::vector<double>& grid);
// mean trajectory implied by alpha-hat (alpha uncertainty enters the band)
SurvivalCurve predict_survival_population(const FitResult& fit, const Vec& x, const Vec& w,
                                          const std::vector<double>& grid);
std::pair<TrajectoryCurve, SurvivalCurve> predict_individual(const FitResult& fit, int subject,
                                                             const std::vector<double>& grid);

double conditional_survival_ratio(double s_u, double s_t);
// pi(u|t) = S(u)/S(t) for a subject's fitted trajectory
double conditional_survival(const FitResult& fit, int subject, double t, double u);

std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(const std::string& text);

}  // namespace icjm
