#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icjm/basis.hpp"
#include "icjm/data.hpp"

namespace icjm {

// One longitudinal covariate's fixed-effect design: a time basis plus optional
// baseline-covariate interactions with the leading basis columns.
struct TrajInteraction {
  int w_index = 0;  // column of Subject::long_fixed
  int cols = 1;     // how many leading basis columns get the interaction
};

struct FixedTrajDesign {
  BasisSet time_basis;
  std::vector<TrajInteraction> interactions;

  int dim() const;
  Vec row(double t, const Vec& w) const;
  // roughness penalty: block-diagonal copies of the time-basis penalty
  PenaltyMatrix penalty() const;
};

struct ModelSpec {
  int p = 0;
  int q = 0;
  int pz = 0;
  BasisSet baseline;                    // size m, non-negative family
  std::vector<FixedTrajDesign> fixed;   // per covariate r
  std::vector<BasisSet> random;         // per covariate r, size c_r

  int m() const { return baseline.size(); }
  int b_r(int r) const { return fixed[r].dim(); }
  int c_r(int r) const { return random[r].size(); }
  int b_total() const;
  int c_total() const;                  // per-subject kappa dimension
  int zeta_dim() const { return p + q + m() + b_total(); }
  int eta_dim(int n) const { return zeta_dim() + n * c_total(); }

  // offsets into the zeta layout (beta, gamma, theta, alpha_1..alpha_q)
  int off_beta() const { return 0; }
  int off_gamma() const { return p; }
  int off_theta() const { return p + q; }
  int off_alpha(int r) const;
  int off_kappa_r(int r) const;  // within a subject's kappa block

  std::vector<std::string> zeta_names() const;
  std::uint64_t digest() const;
};

// The full estimand eta = (beta, gamma, theta, alpha, kappa), theta >= 0.
struct ParameterState {
  Vec beta;
  Vec gamma;
  Vec theta;
  std::vector<Vec> alpha;  // per r
  std::vector<Vec> kappa;  // per subject, length c_total (r-blocks concatenated)

  static ParameterState zeros(const ModelSpec& spec, int n);
  Vec flatten(const ModelSpec& spec) const;
  void unflatten(const ModelSpec& spec, const Vec& eta);
  double max_abs_diff(const ParameterState& other) const;
};

struct VarianceComponents {
  double sigma_eps2 = 1.0;
  double sigma_theta2 = 0.5;
  Vec sigma_alpha2;                  // per r
  std::vector<Vec> sigma_kappa2;     // per r, length c_r

  double lambda_theta() const { return 0.5 / sigma_theta2; }
  double lambda_alpha(int r) const { return 0.5 / sigma_alpha2[r]; }
  static VarianceComponents ones(const ModelSpec& spec);
  Vec flatten() const;  // (eps2, theta2, alpha2..., kappa2...)
  double max_rel_change(const VarianceComponents& other) const;
};

// Per-subject caches: composite Gauss-Legendre nodes on [0, t_hi] split at the
// baseline knots (and at t_lo for interval subjects), basis matrices at the
// nodes, basis rows at the event time, and longitudinal design blocks.
class FitWorkspace {
 public:
  static constexpr int kNodesPerSegment = 15;

  FitWorkspace(const Dataset& ds, const ModelSpec& spec);

  struct SubjCache {
    CensoringStatus st;
    double t_lo = 0.0, t_hi = 0.0;  // t_lo < t_hi only for interval subjects
    int n_lo = 0;                   // nodes covering [0, t_lo]
    Vec nodes, wts;
    Mat psi_nodes;                  // nn x m
    std::vector<Mat> phi_nodes;     // per r: nn x b_r
    std::vector<Mat> xi_nodes;      // per r: nn x c_r
    Vec psi_obs;                    // baseline basis at the exact event time
    std::vector<Vec> phi_at_t, xi_at_t;
    Mat z_obs;                      // n_i x q
    std::vector<Mat> phi_obs, xi_obs;
    std::vector<Mat> g_pp, g_px, g_xx;  // measurement Gram blocks per r
  };

  const Dataset& data() const { return *ds_; }
  const ModelSpec& spec() const { return *spec_; }
  int n() const { return ds_->n(); }
  const SubjCache& cache(int i) const { return cache_[i]; }
  int total_obs() const { return n_obs_; }

  // z_ir at the cached nodes for the current coefficients, nn x q
  Mat z_at_nodes(int i, const ParameterState& s) const;

  const struct Penalties& pen() const { return *pen_; }

 private:
  const Dataset* ds_;
  const ModelSpec* spec_;
  std::vector<SubjCache> cache_;
  int n_obs_ = 0;
  std::shared_ptr<const struct Penalties> pen_;
};

// ---- point evaluation (spec surface; prediction-grade, not fit-hot-path) ----

double trajectory(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
                  int subject, int r, double t);
double hazard(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
              int subject, double t);
double cumulative_hazard(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
                         int subject, double t);
double survival(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
                int subject, double t);

// ---- joint likelihood ----

// log-likelihood of Equa-style joint model: survival branches + Gaussian
// measurement term + random-effect prior term (no roughness penalties)
double log_likelihood(const FitWorkspace& ws, const ParameterState& s,
                      const VarianceComponents& var);
// Phi = log_likelihood - lambda_theta theta'R theta - sum_r lambda_r alpha'R alpha
double penalised_objective(const FitWorkspace& ws, const ParameterState& s,
                           const VarianceComponents& var);

// penalty matrices are fixed per spec; cached here for reuse
struct Penalties {
  PenaltyMatrix theta;
  std::vector<PenaltyMatrix> alpha;
  explicit Penalties(const ModelSpec& spec);
};

const Penalties& penalties(const FitWorkspace& ws);

// ---- JSON-facing model-spec configuration ----

struct TrajConfig {
  std::string family = "polynomial";  // time basis family
  int degree = 3;                     // polynomial degree (polynomial family)
  int size = 5;                       // basis count (spline families)
  std::vector<double> interior_knots; // spline families; absolute times
  std::vector<TrajInteraction> interactions;
  std::string random_family = "polynomial";
  int random_degree = 1;
  int random_size = 2;
  std::vector<double> random_interior_knots;
};

struct ModelSpecConfig {
  std::string baseline_family = "mspline";
  int baseline_order = 3;
  int baseline_m = 0;                // 0: round(n0^{1/3}) clamped to [order, 20]
  std::vector<double> baseline_knots;  // optional explicit knots
  std::vector<TrajConfig> longitudinal;  // one per covariate r
};

// Builds bases from the data: baseline knots at quantiles of the finite
// interval endpoints (with 0 prepended), trajectory bases over the observed
// longitudinal time span.
ModelSpec build_model_spec(const ModelSpecConfig& cfg, const Dataset& ds);

std::string model_spec_config_to_json(const ModelSpecConfig& cfg);
ModelSpecConfig model_spec_config_from_json(const std::string& text);

}  // namespace icjm
