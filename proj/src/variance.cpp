#include "icjm/variance.hpp"

#include <cmath>

namespace icjm {

namespace {

// Schur factorisation of F over the kappa blocks, restricted to the zeta rows
// that are not at an active theta constraint. At a boundary maximiser the full
// F is indefinite along the infeasible directions; all determinant and trace
// work happens on the reduced space, matching the U-matrix reduction used for
// the sandwich covariance.
struct SchurFactor {
  bool pd = false;
  std::vector<int> keep;               // zeta indices kept
  Mat S;                               // F_zz[keep] - sum_i W_i F_zk_i[keep]'
  Eigen::LLT<Mat> S_llt;
  std::vector<Eigen::LLT<Mat>> kk_llt;
  std::vector<Mat> W;                  // per subject: F_zk[keep] F_kk^{-1}
  double logdet = 0.0;
};

std::vector<int> kept_indices(const HessianAssembly& A, const ModelSpec& spec,
                              const std::vector<int>& active_theta) {
  std::vector<bool> drop(A.dim_z, false);
  for (int u : active_theta) drop[spec.off_theta() + u] = true;
  std::vector<int> keep;
  for (int j = 0; j < A.dim_z; ++j)
    if (!drop[j]) keep.push_back(j);
  return keep;
}

SchurFactor build_schur(const HessianAssembly& A, const ModelSpec& spec,
                        const std::vector<int>& active_theta) {
  SchurFactor f;
  f.keep = kept_indices(A, spec, active_theta);
  const int k = static_cast<int>(f.keep.size());
  f.S.resize(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) f.S(a, b) = A.F_zz(f.keep[a], f.keep[b]);
  f.kk_llt.resize(A.n);
  f.W.resize(A.n);
  f.logdet = 0.0;
  for (int i = 0; i < A.n; ++i) {
    if (A.ck == 0) continue;
    f.kk_llt[i].compute(A.F_kk[i]);
    if (f.kk_llt[i].info() != Eigen::Success) return f;
    const Mat L = f.kk_llt[i].matrixL();
    for (int j = 0; j < A.ck; ++j) {
      if (!(L(j, j) > 0.0)) return f;
      f.logdet += 2.0 * std::log(L(j, j));
    }
    Mat fzk(k, A.ck);
    for (int a = 0; a < k; ++a) fzk.row(a) = A.F_zk.row(f.keep[a]).segment(i * A.ck, A.ck);
    f.W[i] = f.kk_llt[i].solve(fzk.transpose()).transpose();
    f.S -= f.W[i] * fzk.transpose();
  }
  f.S_llt.compute(f.S);
  if (f.S_llt.info() != Eigen::Success) return f;
  const Mat Ls = f.S_llt.matrixL();
  for (int j = 0; j < f.S.rows(); ++j) {
    if (!(Ls(j, j) > 0.0)) return f;
    f.logdet += 2.0 * std::log(Ls(j, j));
  }
  f.pd = true;
  return f;
}

}  // namespace

EffectiveDims effective_dims(const HessianAssembly& A, const ModelSpec& spec,
                             const std::vector<int>& active_theta) {
  EffectiveDims nu;
  nu.nu_alpha = Vec::Zero(spec.q);
  nu.nu_kappa.resize(spec.q);
  for (int r = 0; r < spec.q; ++r) nu.nu_kappa[r] = Vec::Zero(spec.c_r(r));

  const SchurFactor f = build_schur(A, spec, active_theta);
  const int k = static_cast<int>(f.keep.size());
  Mat s_inv;                       // reduced F^{-1} zeta block
  std::vector<Mat> kk_corr(A.n);   // W' S^{-1} W per subject
  std::vector<Mat> kk_inv(A.n);
  std::vector<Mat> f_inv_zk(A.n);  // reduced rows
  if (f.pd) {
    s_inv = f.S_llt.solve(Mat::Identity(k, k));
    for (int i = 0; i < A.n; ++i) {
      if (A.ck == 0) continue;
      kk_inv[i] = f.kk_llt[i].solve(Mat::Identity(A.ck, A.ck));
      f_inv_zk[i] = -s_inv * f.W[i];
      kk_corr[i] = f.W[i].transpose() * s_inv * f.W[i];
    }
  } else {
    // degenerate problems: dense pseudo-inverse on the reduced space
    nu.pd = false;
    const int d_full = A.dim_z + A.n * A.ck;
    std::vector<int> keep_full = f.keep;
    for (int j = A.dim_z; j < d_full; ++j) keep_full.push_back(j);
    const Mat F = A.dense();
    Mat Fr(keep_full.size(), keep_full.size());
    for (size_t a = 0; a < keep_full.size(); ++a)
      for (size_t b = 0; b < keep_full.size(); ++b)
        Fr(a, b) = F(keep_full[a], keep_full[b]);
    Eigen::SelfAdjointEigenSolver<Mat> es(Fr);
    const Vec ev = es.eigenvalues();
    const double cap = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    Vec inv_ev = Vec::Zero(ev.size());
    for (int j = 0; j < ev.size(); ++j)
      if (std::abs(ev[j]) > cap) inv_ev[j] = 1.0 / ev[j];
    const Mat Finv = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
    s_inv = Finv.topLeftCorner(k, k);
    for (int i = 0; i < A.n; ++i) {
      if (A.ck == 0) continue;
      kk_inv[i] = Finv.block(k + i * A.ck, k + i * A.ck, A.ck, A.ck);
      f_inv_zk[i] = Finv.block(0, k + i * A.ck, k, A.ck);
      kk_corr[i] = Mat::Zero(A.ck, A.ck);
    }
  }

  // nu_theta / nu_alpha from the reduced zeta block of F^{-1}
  auto reduced_trace = [&](const Mat& q_zz) {
    double acc = 0.0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) acc += s_inv(a, b) * q_zz(f.keep[b], f.keep[a]);
    return acc;
  };
  nu.nu_theta = reduced_trace(A.Qtheta_zz);
  for (int r = 0; r < spec.q; ++r) nu.nu_alpha[r] = reduced_trace(A.Qalpha_each[r]);

  double tr_eps = reduced_trace(A.Ge_zz);
  for (int i = 0; i < A.n; ++i) {
    if (A.ck == 0) break;
    Mat ge_zk(k, A.ck);
    for (int a = 0; a < k; ++a)
      ge_zk.row(a) = A.Ge_zk.row(f.keep[a]).segment(i * A.ck, A.ck);
    tr_eps += 2.0 * (f_inv_zk[i].cwiseProduct(ge_zk)).sum();
    const Mat kk_full = kk_inv[i] + kk_corr[i];
    tr_eps += (kk_full.cwiseProduct(A.Ge_kk[i])).sum();
    for (int r = 0, coord = 0; r < spec.q; ++r)
      for (int l = 0; l < spec.c_r(r); ++l, ++coord)
        nu.nu_kappa[r][l] += kk_full(coord, coord) * A.kappa_prec[coord];
  }
  nu.nu_eps = tr_eps / A.sigma_eps2;
  return nu;
}

double measurement_ssr(const FitWorkspace& ws, const ParameterState& s) {
  const ModelSpec& spec = ws.spec();
  double ssr = 0.0;
  for (int i = 0; i < ws.n(); ++i) {
    const auto& c = ws.cache(i);
    if (c.z_obs.rows() == 0) continue;
    for (int r = 0; r < spec.q; ++r) {
      Vec fit = c.phi_obs[r] * s.alpha[r];
      if (spec.c_r(r) > 0)
        fit += c.xi_obs[r] * s.kappa[i].segment(spec.off_kappa_r(r), spec.c_r(r));
      ssr += (c.z_obs.col(r) - fit).squaredNorm();
    }
  }
  return ssr;
}

double marginal_loglik(const FitWorkspace& ws, const ParameterState& s,
                       const VarianceComponents& var, const HessianAssembly& A,
                       const std::vector<int>& active_theta, bool* warn) {
  if (warn) *warn = false;
  const ModelSpec& spec = ws.spec();
  double phi = penalised_objective(ws, s, var);
  phi -= 0.5 * spec.m() * std::log(var.sigma_theta2);
  for (int r = 0; r < spec.q; ++r)
    phi -= 0.5 * spec.b_r(r) * std::log(var.sigma_alpha2[r]);

  const SchurFactor f = build_schur(A, spec, active_theta);
  double logdet;
  int d_kept = static_cast<int>(f.keep.size()) + A.n * A.ck;
  if (f.pd) {
    logdet = f.logdet;
  } else {
    if (warn) *warn = true;
    Eigen::SelfAdjointEigenSolver<Mat> es(A.dense());
    const Vec ev = es.eigenvalues();
    const double cap = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    logdet = 0.0;
    d_kept = 0;
    for (int j = 0; j < ev.size(); ++j) {
      if (std::abs(ev[j]) > cap) {
        logdet += std::log(std::abs(ev[j]));
        ++d_kept;
      }
    }
  }
  return phi + 0.5 * d_kept * std::log(2.0 * M_PI) - 0.5 * logdet;
}

double marginal_loglik(const FitWorkspace& ws, const ParameterState& s,
                       const VarianceComponents& var) {
  const HessianAssembly A = negative_hessian(ws, s, var);
  const ScoreBlocks g = score(ws, s, var);
  return marginal_loglik(ws, s, var, A, detect_active(s, g.theta), nullptr);
}

VarianceComponents update_variances(const FitWorkspace& ws, const ParameterState& s,
                                    const VarianceComponents& var, const HessianAssembly& A,
                                    const OuterLoopConfig& cfg,
                                    const std::vector<int>& active_theta,
                                    std::vector<std::string>* flags) {
  const ModelSpec& spec = ws.spec();
  const int n = ws.n();
  auto flag = [flags](const std::string& msg) {
    if (flags) flags->push_back(msg);
  };
  EffectiveDims nu = effective_dims(A, spec, active_theta);
  if (!nu.pd) flag("F not positive definite; pseudo-inverse used for traces");
  auto check_nu = [&](double v, double dim, const std::string& name) {
    if (v < -1e-6 || v > dim + 1e-6) flag("nu out of range: " + name);
    return std::clamp(v, 0.0, dim);
  };

  VarianceComponents out = var;
  const Penalties& pen = ws.pen();
  const double floor2 = 1e-10;

  const double n_eff = static_cast<double>(ws.total_obs()) * spec.q;
  if (n_eff > 0) {
    const double nu_e = check_nu(nu.nu_eps, n_eff, "eps");
    double denom = n_eff - nu_e;
    if (denom < cfg.dof_floor) {
      denom = cfg.dof_floor;
      flag("sigma_eps denominator clamped");
    }
    const double num = measurement_ssr(ws, s);
    out.sigma_eps2 = std::max(num / denom, floor2);
    if (num <= 0.0) flag("sigma_eps clamped at floor");
  }

  {
    const double num = s.theta.dot(pen.theta.entries * s.theta);
    if (pen.theta.zero_penalty || num <= 0.0) {
      flag("sigma_theta held (zero penalty)");
    } else {
      const double nu_t = check_nu(nu.nu_theta, spec.m(), "theta");
      double denom = spec.m() - nu_t;
      if (denom < cfg.dof_floor) {
        denom = cfg.dof_floor;
        flag("sigma_theta denominator clamped");
      }
      out.sigma_theta2 = std::max(num / denom, floor2);
    }
  }

  for (int r = 0; r < spec.q; ++r) {
    const double num = s.alpha[r].dot(pen.alpha[r].entries * s.alpha[r]);
    if (pen.alpha[r].zero_penalty || num <= 0.0) {
      flag("sigma_alpha held (zero penalty), r=" + std::to_string(r + 1));
      continue;
    }
    const double nu_a = check_nu(nu.nu_alpha[r], spec.b_r(r), "alpha");
    double denom = spec.b_r(r) - nu_a;
    if (denom < cfg.dof_floor) {
      denom = cfg.dof_floor;
      flag("sigma_alpha denominator clamped");
    }
    out.sigma_alpha2[r] = std::max(num / denom, floor2);
  }

  for (int r = 0; r < spec.q; ++r) {
    for (int l = 0; l < spec.c_r(r); ++l) {
      double num = 0.0;
      for (int i = 0; i < n; ++i) {
        const double kv = s.kappa[i][spec.off_kappa_r(r) + l];
        num += kv * kv;
      }
      const double nu_k = check_nu(nu.nu_kappa[r][l], n, "kappa");
      double denom = n - nu_k;
      if (denom < cfg.dof_floor) {
        denom = cfg.dof_floor;
        flag("sigma_kappa denominator clamped");
      }
      out.sigma_kappa2[r][l] = std::max(num / denom, floor2);
      if (num <= 0.0) flag("sigma_kappa clamped at floor");
    }
  }
  return out;
}

namespace {

VarianceComponents log_mix(const VarianceComponents& to, const VarianceComponents& from,
                           double w) {
  // geometric interpolation keeps every component positive
  VarianceComponents out = to;
  auto mix = [w](double a, double b) {
    return std::exp(w * std::log(a) + (1.0 - w) * std::log(b));
  };
  out.sigma_eps2 = mix(to.sigma_eps2, from.sigma_eps2);
  out.sigma_theta2 = mix(to.sigma_theta2, from.sigma_theta2);
  for (int r = 0; r < to.sigma_alpha2.size(); ++r)
    out.sigma_alpha2[r] = mix(to.sigma_alpha2[r], from.sigma_alpha2[r]);
  for (size_t r = 0; r < to.sigma_kappa2.size(); ++r)
    for (int l = 0; l < to.sigma_kappa2[r].size(); ++l)
      out.sigma_kappa2[r][l] = mix(to.sigma_kappa2[r][l], from.sigma_kappa2[r][l]);
  return out;
}

}  // namespace

FitPrecursor run_outer(const FitWorkspace& ws, const OuterLoopConfig& cfg) {
  const ParameterState state = initial_state(ws);
  return run_outer(ws, cfg, state, initial_variances(ws, state));
}

FitPrecursor run_outer(const FitWorkspace& ws, const OuterLoopConfig& cfg,
                       const ParameterState& state0, const VarianceComponents& var0) {
  FitPrecursor fit;
  ParameterState state = state0;
  VarianceComponents var = var0;

  auto [s0, inner0] = run_inner(ws, state, var, cfg.inner);
  state = std::move(s0);
  fit.inner = inner0;
  HessianAssembly A = negative_hessian(ws, state, var);
  std::vector<int> active = fit.inner.active_set;
  bool warn = false;
  double lm = marginal_loglik(ws, state, var, A, active, &warn);
  if (cfg.record_marginal) fit.outer.marginal_path.push_back(lm);

  for (int it = 0; it < cfg.max_outer; ++it) {
    const double lm_prev = lm;
    const VarianceComponents proposal =
        update_variances(ws, state, var, A, cfg, active, &fit.outer.flags);
    const double change = proposal.max_rel_change(var);

    // the closed-form updates are fixed-point steps, not ascent steps; accept
    // on the marginal likelihood, damping toward the current components when
    // a step overshoots
    bool accepted = false;
    for (double damp : {1.0, 0.5, 0.25}) {
      const VarianceComponents trial = log_mix(proposal, var, damp);
      auto [ts, ti] = run_inner(ws, state, trial, cfg.inner);
      HessianAssembly trial_A = negative_hessian(ws, ts, trial);
      bool trial_warn = false;
      const double trial_lm =
          marginal_loglik(ws, ts, trial, trial_A, ti.active_set, &trial_warn);
      if (trial_lm >= lm - 1e-8 * (1.0 + std::abs(lm))) {
        var = trial;
        state = std::move(ts);
        fit.inner = ti;
        active = fit.inner.active_set;
        A = std::move(trial_A);
        lm = trial_lm;
        warn = trial_warn;
        accepted = true;
        if (damp < 1.0) fit.outer.flags.push_back("variance update damped");
        break;
      }
    }
    if (cfg.record_marginal) fit.outer.marginal_path.push_back(lm);
    if (warn) fit.outer.flags.push_back("marginal loglik used pseudo-determinant");
    fit.outer.variance_path.push_back(var.flatten());
    fit.outer.outer_iterations = it + 1;
    if (!accepted) {
      fit.outer.flags.push_back("variance update rejected; stopped at best marginal");
      fit.outer.converged = fit.inner.converged;
      break;
    }
    if (change < cfg.outer_tol && fit.inner.converged) {
      fit.outer.converged = true;
      break;
    }
    // the variance fixed point can keep drifting geometrically long after the
    // marginal criterion has flattened out
    if (fit.inner.converged && lm - lm_prev < 1e-7 * (1.0 + std::abs(lm))) {
      fit.outer.converged = true;
      fit.outer.flags.push_back("stopped on marginal plateau");
      break;
    }
  }

  fit.state = std::move(state);
  fit.var = var;
  fit.hess = std::move(A);
  const ScoreBlocks g = score(ws, fit.state, var);
  fit.g_theta = g.theta;
  fit.active_set = detect_active(fit.state, g.theta);
  fit.converged = fit.outer.converged && fit.inner.converged;
  return fit;
}

}  // namespace icjm
