#include "icjm/optimizer.hpp"

#include <cmath>
#include <limits>

#include "survival_terms.hpp"

namespace icjm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Armijo backtracking on a 1-d path state(omega); expects slope = <g, d> >= 0.
// Returns the accepted Phi (and leaves the accepted state applied), or phi_now
// with the state restored when no step is acceptable.
template <typename Apply>
double armijo(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
              const InnerLoopConfig& cfg, double phi_now, double slope, Apply&& apply,
              bool* failed = nullptr) {
  if (failed) *failed = false;
  if (!(slope > 0.0)) return phi_now;
  double omega = 1.0;
  for (int k = 0; k <= cfg.armijo_max_backtracks; ++k) {
    apply(omega);
    const double phi = penalised_objective(ws, s, var);
    if (std::isfinite(phi) && phi >= phi_now + cfg.armijo_slope * omega * slope)
      return phi;
    omega *= cfg.armijo_contraction;
  }
  apply(0.0);
  if (failed) *failed = true;
  return phi_now;
}

// symmetric eigen-floor making a candidate Hessian negative definite
Mat floor_negdef(const Mat& h) {
  if (h.rows() == 0) return h;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.transpose()));
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double cap = -1e-8 * scale;
  for (int j = 0; j < ev.size(); ++j) ev[j] = std::min(ev[j], cap);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double update_beta(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                   const InnerLoopConfig& cfg, double phi_now, bool* ridge_flag) {
  const ModelSpec& spec = ws.spec();
  if (spec.p == 0) return phi_now;
  const auto w = beta_weights(ws, s);
  const int n = ws.n();
  Mat xtcx = Mat::Zero(spec.p, spec.p);
  Vec g = Vec::Zero(spec.p);
  for (int i = 0; i < n; ++i) {
    const Vec& x = ws.data().subjects[i].x;
    xtcx += std::max(w.c[i], 0.0) * (x * x.transpose());
    g += (w.delta[i] - w.a[i]) * x;
  }
  Eigen::LDLT<Mat> ldlt(xtcx);
  Vec dir;
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      !(dir = ldlt.solve(g)).allFinite()) {
    const double ridge = 1e-8 * std::max(xtcx.trace(), 1.0) / spec.p;
    xtcx += ridge * Mat::Identity(spec.p, spec.p);
    dir = xtcx.ldlt().solve(g);
    if (ridge_flag) *ridge_flag = true;
  }
  const Vec beta0 = s.beta;
  return armijo(ws, s, var, cfg, phi_now, g.dot(dir),
                [&](double om) { s.beta = beta0 + om * dir; });
}

double update_gamma(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now) {
  const ModelSpec& spec = ws.spec();
  if (spec.q == 0) return phi_now;
  const ScoreBlocks g = score(ws, s, var);
  const Mat h = floor_negdef(hess_gamma(ws, s));
  const Vec dir = -h.ldlt().solve(g.gamma);
  const Vec gamma0 = s.gamma;
  return armijo(ws, s, var, cfg, phi_now, g.gamma.dot(dir),
                [&](double om) { s.gamma = gamma0 + om * dir; });
}

double update_theta(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now) {
  const ScoreBlocks g = score(ws, s, var);
  // the structural denominators dominate [g]^- so theta stays non-negative,
  // and they scale the step like the local curvature
  const Vec d = mi_denominators_structural(ws, s, var).array() + cfg.mi_upsilon;
  Vec dir(s.theta.size());
  for (int u = 0; u < s.theta.size(); ++u) dir[u] = s.theta[u] / d[u] * g.theta[u];
  const Vec theta0 = s.theta;
  return armijo(ws, s, var, cfg, phi_now, g.theta.dot(dir), [&](double om) {
    s.theta = theta0 + om * dir;
    s.theta = s.theta.cwiseMax(0.0);  // multiplicative form; clip roundoff
  });
}

double update_alpha(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now) {
  const ModelSpec& spec = ws.spec();
  if (spec.b_total() == 0) return phi_now;
  const ScoreBlocks sb = score(ws, s, var);
  Vec g(spec.b_total());
  int ab = 0;
  for (int r = 0; r < spec.q; ++r) {
    g.segment(ab, spec.b_r(r)) = sb.alpha[r];
    ab += spec.b_r(r);
  }
  const Mat h = floor_negdef(hess_alpha(ws, s, var));
  const Vec dir = -h.ldlt().solve(g);
  const auto alpha0 = s.alpha;
  return armijo(ws, s, var, cfg, phi_now, g.dot(dir), [&](double om) {
    int at = 0;
    for (int r = 0; r < spec.q; ++r) {
      s.alpha[r] = alpha0[r] + om * dir.segment(at, spec.b_r(r));
      at += spec.b_r(r);
    }
  });
}

double update_kappa(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now) {
  const ModelSpec& spec = ws.spec();
  const int C = spec.c_total();
  if (C == 0) return phi_now;
  const ScoreBlocks sb = score(ws, s, var);
  const auto hs = hess_kappa(ws, s, var);
  const int n = ws.n();
  std::vector<Vec> dirs(n);
  double slope = 0.0;
  for (int i = 0; i < n; ++i) {
    dirs[i] = -floor_negdef(hs[i]).ldlt().solve(sb.kappa[i]);
    slope += sb.kappa[i].dot(dirs[i]);
  }
  const auto kappa0 = s.kappa;
  return armijo(ws, s, var, cfg, phi_now, slope, [&](double om) {
    for (int i = 0; i < n; ++i) s.kappa[i] = kappa0[i] + om * dirs[i];
  });
}

namespace {

// symmetric eigen-floor to a positive definite matrix
Mat floor_posdef(const Mat& h) {
  if (h.rows() == 0) return h;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.transpose()));
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double cap = 1e-8 * scale;
  for (int j = 0; j < ev.size(); ++j) ev[j] = std::max(ev[j], cap);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double update_joint(const FitWorkspace& ws, ParameterState& s, const VarianceComponents& var,
                    const InnerLoopConfig& cfg, double phi_now) {
  const ModelSpec& spec = ws.spec();
  const int dz = spec.zeta_dim();
  const int C = spec.c_total();
  const int n = ws.n();
  const ScoreBlocks sb = score(ws, s, var);
  Vec gz(dz);
  gz.segment(0, spec.p) = sb.beta;
  gz.segment(spec.off_gamma(), spec.q) = sb.gamma;
  gz.segment(spec.off_theta(), spec.m()) = sb.theta;
  for (int r = 0; r < spec.q; ++r) gz.segment(spec.off_alpha(r), spec.b_r(r)) = sb.alpha[r];

  // theta coordinates pinned at the boundary with inward-pointing gradients
  // are excluded from the Newton solve (reduced-face step)
  std::vector<bool> fixed(dz, false);
  for (int u = 0; u < spec.m(); ++u)
    if (s.theta[u] <= 0.0 && sb.theta[u] < 0.0) fixed[spec.off_theta() + u] = true;
  std::vector<int> keep;
  for (int j = 0; j < dz; ++j)
    if (!fixed[j]) keep.push_back(j);
  const int k = static_cast<int>(keep.size());
  if (k == 0 && C == 0) return phi_now;

  // arrow solve of F dir = g with per-block positive-definite floors
  const HessianAssembly A = negative_hessian(ws, s, var);
  Mat S(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) S(a, b) = A.F_zz(keep[a], keep[b]);
  Vec gt(k);
  for (int a = 0; a < k; ++a) gt[a] = gz[keep[a]];
  std::vector<Eigen::LDLT<Mat>> kk(n);
  std::vector<Mat> fzk_red(n);
  for (int i = 0; i < n; ++i) {
    if (C == 0) break;
    kk[i].compute(floor_posdef(A.F_kk[i]));
    fzk_red[i].resize(k, C);
    for (int a = 0; a < k; ++a)
      fzk_red[i].row(a) = A.F_zk.row(keep[a]).segment(i * C, C);
    const Mat w = kk[i].solve(fzk_red[i].transpose()).transpose();
    S -= w * fzk_red[i].transpose();
    gt -= w * sb.kappa[i];
  }
  const Vec dir_red = floor_posdef(S).ldlt().solve(gt);
  Vec dir_z = Vec::Zero(dz);
  for (int a = 0; a < k; ++a) dir_z[keep[a]] = dir_red[a];
  std::vector<Vec> dir_k(n);
  double slope = gt.dot(dir_red);
  double step_inf = dir_z.size() ? dir_z.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < n; ++i) {
    if (C == 0) break;
    dir_k[i] = kk[i].solve(sb.kappa[i] - fzk_red[i].transpose() * dir_red);
    slope += sb.kappa[i].dot(dir_k[i]);
    step_inf = std::max(step_inf, dir_k[i].cwiseAbs().maxCoeff());
  }
  // trust cap: modified-Newton directions blow up along weakly identified
  // ridges; repeated capped steps still traverse them
  double scale = 1.0;
  if (step_inf > 2.0) scale = 2.0 / step_inf;
  dir_z *= scale;
  for (auto& d : dir_k) d *= scale;
  slope *= scale;

  Vec z0(dz);
  z0.segment(0, spec.p) = s.beta;
  z0.segment(spec.off_gamma(), spec.q) = s.gamma;
  z0.segment(spec.off_theta(), spec.m()) = s.theta;
  for (int r = 0; r < spec.q; ++r) z0.segment(spec.off_alpha(r), spec.b_r(r)) = s.alpha[r];
  const auto kappa0 = s.kappa;
  const Vec theta0 = s.theta;

  // projected-Newton backtracking: the sufficient-increase test uses the
  // realised (clipped) step, so active theta coordinates do not poison the
  // slope
  auto apply = [&](double om) {
    const Vec z = z0 + om * dir_z;
    s.beta = z.segment(0, spec.p);
    s.gamma = z.segment(spec.off_gamma(), spec.q);
    s.theta = z.segment(spec.off_theta(), spec.m()).cwiseMax(0.0);
    for (int r = 0; r < spec.q; ++r) s.alpha[r] = z.segment(spec.off_alpha(r), spec.b_r(r));
    for (int i = 0; i < n; ++i)
      if (C > 0) s.kappa[i] = kappa0[i] + om * dir_k[i];
  };
  if (!(slope > 0.0)) return phi_now;
  double omega = 1.0;
  const Vec g_theta = gz.segment(spec.off_theta(), spec.m());
  for (int k = 0; k <= cfg.armijo_max_backtracks; ++k) {
    apply(omega);
    // realised slope: clipped theta coordinates contribute their actual move
    double realised = omega * slope;
    for (int u = 0; u < spec.m(); ++u) {
      const double proposed = omega * dir_z[spec.off_theta() + u];
      const double actual = s.theta[u] - theta0[u];
      realised += g_theta[u] * (actual - proposed);
    }
    const double phi = penalised_objective(ws, s, var);
    if (realised > 0.0 && std::isfinite(phi) &&
        phi >= phi_now + cfg.armijo_slope * realised)
      return phi;
    omega *= cfg.armijo_contraction;
  }
  apply(0.0);
  return phi_now;
}

std::vector<int> detect_active(const ParameterState& s, const Vec& g_theta) {
  std::vector<int> active;
  for (int u = 0; u < s.theta.size(); ++u)
    if (s.theta[u] < 1e-2 && g_theta[u] < -1e-2) active.push_back(u);
  return active;
}

std::pair<ParameterState, InnerLoopTrace> run_inner(const FitWorkspace& ws,
                                                    const ParameterState& start,
                                                    const VarianceComponents& var,
                                                    const InnerLoopConfig& cfg) {
  ParameterState s = start;
  InnerLoopTrace trace;
  if (s.theta.size() > 0 && s.theta.minCoeff() < 0.0)
    throw std::invalid_argument("run_inner: infeasible start, theta must be >= 0");
  double phi = penalised_objective(ws, s, var);
  if (!std::isfinite(phi))
    throw std::invalid_argument("run_inner: objective not finite at the start state");

  int zero_escapes = 0;
  for (int it = 0; it < cfg.max_iter; ++it) {
    const ParameterState prev = s;
    bool ridge = false;
    phi = update_beta(ws, s, var, cfg, phi, &ridge);
    phi = update_gamma(ws, s, var, cfg, phi);
    phi = update_theta(ws, s, var, cfg, phi);
    phi = update_alpha(ws, s, var, cfg, phi);
    phi = update_kappa(ws, s, var, cfg, phi);
    if (cfg.joint_zeta_step) phi = update_joint(ws, s, var, cfg, phi);
    trace.ridge_applied = trace.ridge_applied || ridge;
    trace.objective_path.push_back(phi);
    trace.iterations = it + 1;
    if (s.max_abs_diff(prev) < cfg.tol) {
      // multiplicative updates cannot leave an exact zero; restart such
      // entries when their gradient points inward
      const ScoreBlocks g = score(ws, s, var);
      bool escaped = false;
      if (zero_escapes < cfg.max_zero_escapes) {
        const double top = s.theta.maxCoeff();
        for (int u = 0; u < s.theta.size(); ++u) {
          if (s.theta[u] == 0.0 && g.theta[u] > 0.0 && top > 0.0) {
            s.theta[u] = 1e-4 * top;
            escaped = true;
          }
        }
      }
      if (escaped) {
        ++zero_escapes;
        phi = penalised_objective(ws, s, var);
        continue;
      }
      trace.converged = true;
      trace.active_set = detect_active(s, g.theta);
      break;
    }
  }
  if (!trace.converged) {
    const ScoreBlocks g = score(ws, s, var);
    trace.active_set = detect_active(s, g.theta);
  }
  return {std::move(s), std::move(trace)};
}

ParameterState initial_state(const FitWorkspace& ws) {
  const ModelSpec& spec = ws.spec();
  const Dataset& ds = ws.data();
  ParameterState s = ParameterState::zeros(spec, ds.n());

  // flat hazard matched to the crude rate over the observed span
  double exposure = 0.0;
  int events = 0;
  for (const auto& sub : ds.subjects) {
    exposure += sub.obs_time();
    if (sub.status != CensoringStatus::Right) ++events;
  }
  const double rate = std::max(events, 1) / std::max(exposure, 1e-12);
  const double span = spec.baseline.upper() - spec.baseline.lower();
  s.theta.setConstant(std::max(rate * span / spec.m(), 1e-8));

  // least squares of observed z on the fixed design with kappa = 0
  for (int r = 0; r < spec.q; ++r) {
    Mat xtx = Mat::Zero(spec.b_r(r), spec.b_r(r));
    Vec xty = Vec::Zero(spec.b_r(r));
    for (int i = 0; i < ds.n(); ++i) {
      const auto& c = ws.cache(i);
      if (c.z_obs.rows() == 0) continue;
      xtx += c.g_pp[r];
      xty += c.phi_obs[r].transpose() * c.z_obs.col(r);
    }
    xtx += 1e-8 * Mat::Identity(spec.b_r(r), spec.b_r(r));
    s.alpha[r] = xtx.ldlt().solve(xty);
  }
  return s;
}

VarianceComponents initial_variances(const FitWorkspace& ws, const ParameterState& s) {
  const ModelSpec& spec = ws.spec();
  VarianceComponents v = VarianceComponents::ones(spec);
  // start on the under-smoothed side: prior variances at the scale of the
  // initial roughness so the first inner solve keeps the fitted shapes
  const Penalties& pen = ws.pen();
  v.sigma_theta2 = std::max(s.theta.dot(pen.theta.entries * s.theta) / spec.m(), 0.5);

  v.sigma_alpha2 = Vec::Constant(spec.q, 0.5);
  for (int r = 0; r < spec.q; ++r)
    v.sigma_alpha2[r] =
        std::max(s.alpha[r].dot(pen.alpha[r].entries * s.alpha[r]) / spec.b_r(r), 0.5);

  // method-of-moments start: per-subject least squares of the residual from
  // the pooled mean trajectory on the random-effects design gives a clean
  // within-subject noise estimate and between-subject coefficient spreads
  double pooled_ssr = 0.0;
  int pooled_obs = 0;
  double within_ss = 0.0;
  int within_df = 0;
  std::vector<std::vector<std::vector<double>>> coefs(spec.q);
  for (int r = 0; r < spec.q; ++r) coefs[r].resize(spec.c_r(r));
  for (int i = 0; i < ws.n(); ++i) {
    const auto& c = ws.cache(i);
    const int ni = static_cast<int>(c.z_obs.rows());
    pooled_obs += ni * spec.q;
    for (int r = 0; r < spec.q; ++r) {
      if (ni == 0) break;
      const Vec resid = c.z_obs.col(r) - c.phi_obs[r] * s.alpha[r];
      pooled_ssr += resid.squaredNorm();
      const int cr = spec.c_r(r);
      if (cr == 0 || ni < cr + 1) continue;
      const Mat b = c.xi_obs[r];
      const Vec coef =
          (b.transpose() * b + 1e-10 * Mat::Identity(cr, cr)).ldlt().solve(b.transpose() * resid);
      within_ss += (resid - b * coef).squaredNorm();
      within_df += ni - cr;
      for (int l = 0; l < cr; ++l) coefs[r][l].push_back(coef[l]);
    }
  }
  const double pooled = (pooled_obs > 4) ? std::max(pooled_ssr / pooled_obs, 1e-6) : 1e-2;
  v.sigma_eps2 = (within_df >= 5) ? std::max(within_ss / within_df, 1e-8) : pooled;
  v.sigma_kappa2.assign(spec.q, Vec());
  for (int r = 0; r < spec.q; ++r) {
    v.sigma_kappa2[r] = Vec::Constant(spec.c_r(r), std::max(0.25 * v.sigma_eps2, 1e-4));
    for (int l = 0; l < spec.c_r(r); ++l) {
      if (coefs[r][l].size() >= 5) {
        double mean = 0.0;
        for (double x : coefs[r][l]) mean += x;
        mean /= coefs[r][l].size();
        double ss = 0.0;
        for (double x : coefs[r][l]) ss += (x - mean) * (x - mean);
        v.sigma_kappa2[r][l] = std::max(ss / (coefs[r][l].size() - 1), 1e-4);
      }
    }
  }
  return v;
}

}  // namespace icjm
