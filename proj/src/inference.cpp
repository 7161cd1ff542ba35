#include "icjm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "icjm/version.hpp"

namespace icjm {

using nlohmann::json;

Vec FitResult::zeta() const {
  Vec z(spec.zeta_dim());
  z.segment(0, spec.p) = state.beta;
  z.segment(spec.off_gamma(), spec.q) = state.gamma;
  z.segment(spec.off_theta(), spec.m()) = state.theta;
  for (int r = 0; r < spec.q; ++r) z.segment(spec.off_alpha(r), spec.b_r(r)) = state.alpha[r];
  return z;
}

Mat sandwich_covariance(const HessianAssembly& A, const std::vector<int>& active_theta,
                        const ModelSpec& spec) {
  const int dz = A.dim_z;
  std::vector<bool> drop(dz, false);
  for (int u : active_theta) drop[spec.off_theta() + u] = true;
  std::vector<int> keep;
  for (int j = 0; j < dz; ++j)
    if (!drop[j]) keep.push_back(j);
  const int k = static_cast<int>(keep.size());

  // Schur complement of the kappa blocks restricted to the kept zeta rows
  Mat s_star(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) s_star(a, b) = A.F_zz(keep[a], keep[b]);
  Mat pen = A.Qtheta_zz;
  for (const auto& qa : A.Qalpha_each) pen += qa;
  Mat pen_star(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) pen_star(a, b) = pen(keep[a], keep[b]);

  if (A.ck > 0) {
    for (int i = 0; i < A.n; ++i) {
      Eigen::LLT<Mat> llt(A.F_kk[i]);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("sandwich: kappa block not positive definite");
      Mat fzk(k, A.ck);
      for (int a = 0; a < k; ++a) fzk.row(a) = A.F_zk.row(keep[a]).segment(i * A.ck, A.ck);
      s_star -= fzk * llt.solve(fzk.transpose());
    }
  }

  Eigen::LDLT<Mat> ldlt(s_star);
  bool singular = (ldlt.info() != Eigen::Success);
  if (!singular) {
    const Vec d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (!(dmax > 0.0) || d.minCoeff() <= 1e-14 * dmax) singular = true;
  }
  if (singular) {
    Eigen::SelfAdjointEigenSolver<Mat> es(s_star);
    throw std::runtime_error(
        "sandwich: reduced information matrix is singular (smallest eigenvalue " +
        std::to_string(es.eigenvalues().minCoeff()) + "); fit not identifiable");
  }
  const Mat s_inv = ldlt.solve(Mat::Identity(k, k));
  const Mat cov_star = s_inv - s_inv * pen_star * s_inv;

  Mat cov = Mat::Zero(dz, dz);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) cov(keep[a], keep[b]) = cov_star(a, b);
  return cov;
}

FitResult make_fit_result(const FitWorkspace& ws, const FitPrecursor& pre,
                          std::uint64_t seed, std::uint64_t config_digest) {
  FitResult fit;
  fit.spec = ws.spec();
  fit.state = pre.state;
  fit.var = pre.var;
  fit.active_set = pre.active_set;
  fit.covariance = sandwich_covariance(pre.hess, pre.active_set, ws.spec());
  fit.converged = pre.converged;
  fit.inner_iterations = pre.inner.iterations;
  fit.outer_iterations = pre.outer.outer_iterations;
  fit.objective_path = pre.inner.objective_path;
  fit.flags = pre.outer.flags;
  fit.penalised_loglik = penalised_objective(ws, pre.state, pre.var);
  fit.marginal_loglik =
      pre.outer.marginal_path.empty() ? 0.0 : pre.outer.marginal_path.back();
  fit.tool_version = kToolVersion;
  fit.seed = seed;
  fit.data_digest = ws.data().digest();
  fit.spec_digest = ws.spec().digest();
  fit.config_digest = config_digest;
  for (const auto& s : ws.data().subjects) {
    fit.subject_ids.push_back(s.id);
    fit.subject_x.push_back(s.x);
    fit.subject_w.push_back(s.long_fixed);
  }
  return fit;
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

WaldResult wald_impl(double est, double var) {
  WaldResult w;
  w.estimate = est;
  if (!(var > 0.0)) {
    w.degenerate = true;
    w.se = 0.0;
    w.z = w.p = std::numeric_limits<double>::quiet_NaN();
    w.ci_lo = w.ci_hi = est;
    return w;
  }
  w.se = std::sqrt(var);
  w.z = est / w.se;
  w.p = 2.0 * normal_sf(std::abs(w.z));
  w.ci_lo = est - 1.959963984540054 * w.se;
  w.ci_hi = est + 1.959963984540054 * w.se;
  return w;
}

}  // namespace

WaldResult wald(const FitResult& fit, int zeta_index) {
  return wald_impl(fit.zeta()[zeta_index], fit.covariance(zeta_index, zeta_index));
}

WaldResult wald_contrast(const FitResult& fit, const Vec& contrast) {
  return wald_impl(contrast.dot(fit.zeta()),
                   contrast.dot(fit.covariance * contrast));
}

namespace {

// quadrature pieces for a prediction-time cumulative hazard
struct PredCtx {
  const FitResult* fit;
  Vec x;
  std::function<Vec(double)> traj;  // z(t)
  bool alpha_grad = false;          // propagate alpha uncertainty
  Vec w;                            // long_fixed values when alpha_grad
  const Vec* kappa = nullptr;       // subject random effects when alpha_grad
};

Vec traj_from_coefs(const FitResult& fit, const Vec& w, const Vec* kappa, double t) {
  const ModelSpec& spec = fit.spec;
  Vec z(spec.q);
  for (int r = 0; r < spec.q; ++r) {
    z[r] = spec.fixed[r].row(t, w).dot(fit.state.alpha[r]);
    if (kappa && spec.c_r(r) > 0)
      z[r] += spec.random[r].eval(t).dot(kappa->segment(spec.off_kappa_r(r), spec.c_r(r)));
  }
  return z;
}

// returns H(t) and the gradient of H w.r.t. zeta
double pred_hazard_integral(const PredCtx& c, double t, Vec* grad) {
  const ModelSpec& spec = c.fit->spec;
  const ParameterState& st = c.fit->state;
  const double exb = std::exp(c.x.dot(st.beta));
  if (grad) *grad = Vec::Zero(spec.zeta_dim());
  if (t <= 0.0) return 0.0;
  std::vector<double> brk{0.0};
  for (double k : spec.baseline.knots())
    if (k > 0.0 && k < t) brk.push_back(k);
  brk.push_back(t);
  std::sort(brk.begin(), brk.end());
  brk.erase(std::unique(brk.begin(), brk.end()), brk.end());

  double i0 = 0.0;
  Vec a = Vec::Zero(spec.q), psi = Vec::Zero(spec.m());
  Vec dphi = Vec::Zero(spec.b_total());
  for (size_t sgm = 0; sgm + 1 < brk.size(); ++sgm) {
    const auto rule = quadrature(brk[sgm], brk[sgm + 1], FitWorkspace::kNodesPerSegment);
    for (size_t j = 0; j < rule.nodes.size(); ++j) {
      const double u = rule.nodes[j];
      const Vec z = c.traj(u);
      const Vec psis = spec.baseline.eval(u);
      const double h0 = psis.dot(st.theta);
      const double wj = rule.weights[j] * std::exp(z.dot(st.gamma));
      i0 += wj * h0;
      if (grad) {
        a += (wj * h0) * z;
        psi += wj * psis;
        if (c.alpha_grad) {
          int ab = 0;
          for (int r = 0; r < spec.q; ++r) {
            dphi.segment(ab, spec.b_r(r)) += (wj * h0) * spec.fixed[r].row(u, c.w);
            ab += spec.b_r(r);
          }
        }
      }
    }
  }
  const double H = exb * i0;
  if (grad) {
    grad->segment(0, spec.p) = c.x * H;
    grad->segment(spec.off_gamma(), spec.q) = exb * a;
    grad->segment(spec.off_theta(), spec.m()) = exb * psi;
    if (c.alpha_grad) {
      int ab = 0;
      for (int r = 0; r < spec.q; ++r) {
        grad->segment(spec.off_alpha(r), spec.b_r(r)) =
            (exb * st.gamma[r]) * dphi.segment(ab, spec.b_r(r));
        ab += spec.b_r(r);
      }
    }
  }
  return H;
}

SurvivalCurve predict_curve(const PredCtx& c, const std::vector<double>& grid) {
  SurvivalCurve out;
  Vec grad;
  for (double t : grid) {
    const double H = pred_hazard_integral(c, t, &grad);
    const double s = std::exp(-H);
    out.t.push_back(t);
    out.s.push_back(s);
    if (H <= 0.0) {
      out.lo.push_back(1.0);
      out.hi.push_back(1.0);
      continue;
    }
    // delta method on ln H keeps the band inside (0, 1]
    const double var_logH = grad.dot(c.fit->covariance * grad) / (H * H);
    const double half = 1.959963984540054 * std::sqrt(std::max(var_logH, 0.0));
    out.lo.push_back(std::exp(-H * std::exp(half)));
    out.hi.push_back(std::exp(-H * std::exp(-half)));
  }
  return out;
}

}  // namespace

SurvivalCurve predict_survival(const FitResult& fit, const Vec& x,
                               const std::function<Vec(double)>& trajectory,
                               const std::vector<double>& grid) {
  PredCtx c{&fit, x, trajectory, false, Vec(), nullptr};
  return predict_curve(c, grid);
}

SurvivalCurve predict_survival_population(const FitResult& fit, const Vec& x, const Vec& w,
                                          const std::vector<double>& grid) {
  PredCtx c{&fit, x, {}, true, w, nullptr};
  c.traj = [&fit, w](double t) { return traj_from_coefs(fit, w, nullptr, t); };
  return predict_curve(c, grid);
}

std::pair<TrajectoryCurve, SurvivalCurve> predict_individual(const FitResult& fit, int subject,
                                                             const std::vector<double>& grid) {
  if (subject < 0 || subject >= static_cast<int>(fit.state.kappa.size()))
    throw std::out_of_range("predict_individual: subject index");
  const Vec& w = fit.subject_w[subject];
  const Vec* kap = &fit.state.kappa[subject];
  PredCtx c{&fit, fit.subject_x[subject], {}, true, w, kap};
  c.traj = [&fit, w, kap](double t) { return traj_from_coefs(fit, w, kap, t); };
  TrajectoryCurve tc;
  tc.t = grid;
  tc.values.resize(static_cast<int>(grid.size()), fit.spec.q);
  for (size_t j = 0; j < grid.size(); ++j)
    tc.values.row(static_cast<int>(j)) = c.traj(grid[j]).transpose();
  return {tc, predict_curve(c, grid)};
}

double conditional_survival_ratio(double s_u, double s_t) {
  if (!(s_t > 0.0))
    throw std::domain_error("conditional survival undefined: S(t) = 0");
  return s_u / s_t;
}

double conditional_survival(const FitResult& fit, int subject, double t, double u) {
  if (u < t) throw std::domain_error("conditional survival requires u >= t");
  const auto [tc, sc] = predict_individual(fit, subject, {t, u});
  return conditional_survival_ratio(sc.s[1], sc.s[0]);
}

// ---------------------------------------------------------------- serialization

namespace {

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int j = 0; j < v.size(); ++j) a.push_back(v[j]);
  return a;
}

Vec vec_from_json(const json& a) {
  Vec v(a.size());
  for (size_t j = 0; j < a.size(); ++j) v[static_cast<int>(j)] = a[j].get<double>();
  return v;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i)));
  return rows;
}

Mat mat_from_json(const json& rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

json basis_to_json(const BasisSet& b) {
  return json{{"family", b.family_name()},
              {"order", b.order()},
              {"knots", b.knots()}};
}

BasisSet basis_from_json(const json& j) {
  const BasisFamily fam = basis_family_from_string(j["family"].get<std::string>());
  const auto knots = j["knots"].get<std::vector<double>>();
  const int order = j["order"].get<int>();
  switch (fam) {
    case BasisFamily::MSpline: return BasisSet::mspline(knots, order);
    case BasisFamily::BSpline: return BasisSet::bspline(knots, order);
    case BasisFamily::Indicator: return BasisSet::indicator(knots);
    case BasisFamily::Polynomial:
      return BasisSet::polynomial(order - 1, knots.front(), knots.back());
  }
  throw std::logic_error("basis_from_json: unreachable");
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["p"] = spec.p;
  j["q"] = spec.q;
  j["pz"] = spec.pz;
  j["baseline"] = basis_to_json(spec.baseline);
  j["fixed"] = json::array();
  for (const auto& f : spec.fixed) {
    json jf;
    jf["time_basis"] = basis_to_json(f.time_basis);
    jf["interactions"] = json::array();
    for (const auto& it : f.interactions)
      jf["interactions"].push_back({{"covariate", it.w_index}, {"columns", it.cols}});
    j["fixed"].push_back(jf);
  }
  j["random"] = json::array();
  for (const auto& r : spec.random) j["random"].push_back(basis_to_json(r));
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.p = j["p"].get<int>();
  spec.q = j["q"].get<int>();
  spec.pz = j["pz"].get<int>();
  spec.baseline = basis_from_json(j["baseline"]);
  for (const auto& jf : j["fixed"]) {
    FixedTrajDesign f{basis_from_json(jf["time_basis"]), {}};
    for (const auto& it : jf["interactions"]) {
      TrajInteraction ti;
      ti.w_index = it["covariate"].get<int>();
      ti.cols = it["columns"].get<int>();
      f.interactions.push_back(ti);
    }
    spec.fixed.push_back(std::move(f));
  }
  for (const auto& jr : j["random"]) spec.random.push_back(basis_from_json(jr));
  return spec;
}

}  // namespace

std::string fit_to_json(const FitResult& fit) {
  json j;
  j["schema_version"] = 1;
  j["tool_version"] = fit.tool_version;
  j["seed"] = fit.seed;
  j["data_digest"] = fit.data_digest;
  j["spec_digest"] = fit.spec_digest;
  j["config_digest"] = fit.config_digest;
  j["converged"] = fit.converged;
  j["inner_iterations"] = fit.inner_iterations;
  j["outer_iterations"] = fit.outer_iterations;
  j["penalised_loglik"] = fit.penalised_loglik;
  j["marginal_loglik"] = fit.marginal_loglik;
  j["flags"] = fit.flags;
  j["model"] = spec_to_json(fit.spec);
  j["estimates"]["beta"] = vec_to_json(fit.state.beta);
  j["estimates"]["gamma"] = vec_to_json(fit.state.gamma);
  j["estimates"]["theta"] = vec_to_json(fit.state.theta);
  j["estimates"]["alpha"] = json::array();
  for (const auto& a : fit.state.alpha) j["estimates"]["alpha"].push_back(vec_to_json(a));
  j["estimates"]["kappa"] = json::array();
  for (const auto& k : fit.state.kappa) j["estimates"]["kappa"].push_back(vec_to_json(k));
  j["variances"]["sigma_eps2"] = fit.var.sigma_eps2;
  j["variances"]["sigma_theta2"] = fit.var.sigma_theta2;
  j["variances"]["sigma_alpha2"] = vec_to_json(fit.var.sigma_alpha2);
  j["variances"]["sigma_kappa2"] = json::array();
  for (const auto& k : fit.var.sigma_kappa2)
    j["variances"]["sigma_kappa2"].push_back(vec_to_json(k));
  j["covariance"] = mat_to_json(fit.covariance);
  j["active_set"] = fit.active_set;
  j["objective_path"] = fit.objective_path;
  j["zeta_names"] = fit.zeta_names();
  j["subjects"]["ids"] = fit.subject_ids;
  j["subjects"]["x"] = json::array();
  for (const auto& x : fit.subject_x) j["subjects"]["x"].push_back(vec_to_json(x));
  j["subjects"]["w"] = json::array();
  for (const auto& w : fit.subject_w) j["subjects"]["w"].push_back(vec_to_json(w));
  return j.dump(1);
}

FitResult fit_from_json(const std::string& text) {
  const json j = json::parse(text);
  FitResult fit;
  fit.tool_version = j.value("tool_version", "");
  fit.seed = j.value("seed", 0ULL);
  fit.data_digest = j.value("data_digest", 0ULL);
  fit.spec_digest = j.value("spec_digest", 0ULL);
  fit.config_digest = j.value("config_digest", 0ULL);
  fit.converged = j.value("converged", false);
  fit.inner_iterations = j.value("inner_iterations", 0);
  fit.outer_iterations = j.value("outer_iterations", 0);
  fit.penalised_loglik = j.value("penalised_loglik", 0.0);
  fit.marginal_loglik = j.value("marginal_loglik", 0.0);
  fit.flags = j.value("flags", std::vector<std::string>{});
  fit.spec = spec_from_json(j["model"]);
  fit.state.beta = vec_from_json(j["estimates"]["beta"]);
  fit.state.gamma = vec_from_json(j["estimates"]["gamma"]);
  fit.state.theta = vec_from_json(j["estimates"]["theta"]);
  for (const auto& a : j["estimates"]["alpha"]) fit.state.alpha.push_back(vec_from_json(a));
  for (const auto& k : j["estimates"]["kappa"]) fit.state.kappa.push_back(vec_from_json(k));
  fit.var.sigma_eps2 = j["variances"]["sigma_eps2"].get<double>();
  fit.var.sigma_theta2 = j["variances"]["sigma_theta2"].get<double>();
  fit.var.sigma_alpha2 = vec_from_json(j["variances"]["sigma_alpha2"]);
  for (const auto& k : j["variances"]["sigma_kappa2"])
    fit.var.sigma_kappa2.push_back(vec_from_json(k));
  fit.covariance = mat_from_json(j["covariance"]);
  fit.active_set = j.value("active_set", std::vector<int>{});
  fit.objective_path = j.value("objective_path", std::vector<double>{});
  fit.subject_ids = j["subjects"]["ids"].get<std::vector<std::string>>();
  for (const auto& x : j["subjects"]["x"]) fit.subject_x.push_back(vec_from_json(x));
  for (const auto& w : j["subjects"]["w"]) fit.subject_w.push_back(vec_from_json(w));
  return fit;
}

}  // namespace icjm
