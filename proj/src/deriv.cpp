#include "icjm/deriv.hpp"

#include <cmath>

#include "survival_terms.hpp"

namespace icjm {

namespace {

// Integral moments of the weighted integrand over [0, t_lo] and [0, t_hi].
// Everything below is a weighted Gram of cached node matrices with the weight
// vector w_j = glw_j * exp(z_j'gamma); "h" marks an extra h0(s_j) factor.
struct Moments {
  double i0 = 0.0;   // int h0 e^{z'g}
  Vec a;             // q: int h0 z_r e
  Vec psi;           // m: int psi_u e
  Vec dphi;          // B: int h0 phi e   (r-blocks stacked)
  Vec dxi;           // C: int h0 xi e
  // second order
  Mat ars;           // q x q: int h0 z z' e
  Mat p;             // q x m: int psi_u z_r e
  Mat dphz;          // B x q: int h0 phi z_s e
  Mat dxz;           // C x q
  Mat fph;           // B x m: int psi phi e
  Mat fxi;           // C x m
  Mat dpp;           // B x B: int h0 phi phi' e
  Mat dpx;           // B x C
  Mat dxx;           // C x C
};

struct LocalDerivs {
  double h_lo = 0.0, h_hi = 0.0;
  Vec dh_lo, dh_hi;
  Mat d2h_lo, d2h_hi;
};

enum class Level { Grad, Hess };

// local parameter layout: [beta | gamma | theta | alpha | kappa_i]
struct LocalLayout {
  int p, q, m, B, C, L;
  int o_gamma, o_theta, o_alpha, o_kappa;
  explicit LocalLayout(const ModelSpec& spec)
      : p(spec.p), q(spec.q), m(spec.m()), B(spec.b_total()), C(spec.c_total()),
        L(p + q + m + B + C), o_gamma(p), o_theta(p + q), o_alpha(p + q + m),
        o_kappa(p + q + m + B) {}
};

void accumulate_moments(const FitWorkspace& ws, int i, const Mat& z, const Vec& w,
                        const Vec& h0n, int lo, int hi, Level level, Moments& mo) {
  const auto& c = ws.cache(i);
  const ModelSpec& spec = ws.spec();
  const int len = hi - lo;
  if (len <= 0) return;
  const auto wv = w.segment(lo, len);
  const Vec hw = h0n.segment(lo, len).cwiseProduct(wv);
  const auto zz = z.middleRows(lo, len);
  const auto psis = c.psi_nodes.middleRows(lo, len);

  mo.i0 += hw.sum();
  mo.a += zz.transpose() * hw;
  mo.psi += psis.transpose() * wv;
  int at = 0;
  for (int r = 0; r < spec.q; ++r) {
    const auto ph = c.phi_nodes[r].middleRows(lo, len);
    mo.dphi.segment(at, spec.b_r(r)) += ph.transpose() * hw;
    at += spec.b_r(r);
  }
  at = 0;
  for (int r = 0; r < spec.q; ++r) {
    const auto xi = c.xi_nodes[r].middleRows(lo, len);
    mo.dxi.segment(at, spec.c_r(r)) += xi.transpose() * hw;
    at += spec.c_r(r);
  }
  if (level != Level::Hess) return;

  const Mat z_hw = zz.array().colwise() * hw.array();
  const Mat z_w = zz.array().colwise() * wv.array();
  mo.ars += z_hw.transpose() * zz;
  mo.p += z_w.transpose() * psis;
  int ab = 0;
  for (int r = 0; r < spec.q; ++r) {
    const auto ph = c.phi_nodes[r].middleRows(lo, len);
    const Mat ph_hw = ph.array().colwise() * hw.array();
    const Mat ph_w = ph.array().colwise() * wv.array();
    mo.dphz.middleRows(ab, spec.b_r(r)) += ph_hw.transpose() * zz;
    mo.fph.middleRows(ab, spec.b_r(r)) += ph_w.transpose() * psis;
    int ab2 = 0;
    for (int s = 0; s < spec.q; ++s) {
      const auto ph2 = c.phi_nodes[s].middleRows(lo, len);
      mo.dpp.block(ab, ab2, spec.b_r(r), spec.b_r(s)) += ph_hw.transpose() * ph2;
      ab2 += spec.b_r(s);
    }
    int ac2 = 0;
    for (int s = 0; s < spec.q; ++s) {
      const auto xi2 = c.xi_nodes[s].middleRows(lo, len);
      mo.dpx.block(ab, ac2, spec.b_r(r), spec.c_r(s)) += ph_hw.transpose() * xi2;
      ac2 += spec.c_r(s);
    }
    ab += spec.b_r(r);
  }
  int ac = 0;
  for (int r = 0; r < spec.q; ++r) {
    const auto xi = c.xi_nodes[r].middleRows(lo, len);
    const Mat xi_hw = xi.array().colwise() * hw.array();
    const Mat xi_w = xi.array().colwise() * wv.array();
    mo.dxz.middleRows(ac, spec.c_r(r)) += xi_hw.transpose() * zz;
    mo.fxi.middleRows(ac, spec.c_r(r)) += xi_w.transpose() * psis;
    int ac2 = 0;
    for (int s = 0; s < spec.q; ++s) {
      const auto xi2 = c.xi_nodes[s].middleRows(lo, len);
      mo.dxx.block(ac, ac2, spec.c_r(r), spec.c_r(s)) += xi_hw.transpose() * xi2;
      ac2 += spec.c_r(s);
    }
    ac += spec.c_r(r);
  }
}

Moments zero_moments(const LocalLayout& lo, Level level) {
  Moments mo;
  mo.a = Vec::Zero(lo.q);
  mo.psi = Vec::Zero(lo.m);
  mo.dphi = Vec::Zero(lo.B);
  mo.dxi = Vec::Zero(lo.C);
  if (level == Level::Hess) {
    mo.ars = Mat::Zero(lo.q, lo.q);
    mo.p = Mat::Zero(lo.q, lo.m);
    mo.dphz = Mat::Zero(lo.B, lo.q);
    mo.dxz = Mat::Zero(lo.C, lo.q);
    mo.fph = Mat::Zero(lo.B, lo.m);
    mo.fxi = Mat::Zero(lo.C, lo.m);
    mo.dpp = Mat::Zero(lo.B, lo.B);
    mo.dpx = Mat::Zero(lo.B, lo.C);
    mo.dxx = Mat::Zero(lo.C, lo.C);
  }
  return mo;
}

// dI0 over [gamma | theta | alpha | kappa] (no beta rows)
Vec assemble_di0(const ModelSpec& spec, const ParameterState& st, const Moments& mo) {
  const LocalLayout lo(spec);
  Vec v(lo.q + lo.m + lo.B + lo.C);
  v.segment(0, lo.q) = mo.a;
  v.segment(lo.q, lo.m) = mo.psi;
  int ab = lo.q + lo.m;
  for (int r = 0; r < spec.q; ++r) {
    v.segment(ab, spec.b_r(r)) = st.gamma[r] * mo.dphi.segment(ab - lo.q - lo.m, spec.b_r(r));
    ab += spec.b_r(r);
  }
  int ac = lo.q + lo.m + lo.B;
  int src = 0;
  for (int r = 0; r < spec.q; ++r) {
    v.segment(ac, spec.c_r(r)) = st.gamma[r] * mo.dxi.segment(src, spec.c_r(r));
    ac += spec.c_r(r);
    src += spec.c_r(r);
  }
  return v;
}

Mat assemble_d2i0(const ModelSpec& spec, const ParameterState& st, const Moments& mo) {
  const LocalLayout lo(spec);
  const int d = lo.q + lo.m + lo.B + lo.C;
  const int og = 0, ot = lo.q, oa = lo.q + lo.m, ok = lo.q + lo.m + lo.B;
  Mat h = Mat::Zero(d, d);
  h.block(og, og, lo.q, lo.q) = mo.ars;
  h.block(og, ot, lo.q, lo.m) = mo.p;
  int ab = 0;
  for (int r = 0; r < spec.q; ++r) {
    const int br = spec.b_r(r);
    // (alpha_rb, gamma_s) = delta_rs Dphi_rb + gamma_r Dphz_{rb,s}
    Mat blk = st.gamma[r] * mo.dphz.middleRows(ab, br);
    blk.col(r) += mo.dphi.segment(ab, br);
    h.block(oa + ab, og, br, lo.q) = blk;
    // (alpha_rb, theta_u) = gamma_r Fph
    h.block(oa + ab, ot, br, lo.m) = st.gamma[r] * mo.fph.middleRows(ab, br);
    ab += br;
  }
  int ac = 0;
  for (int r = 0; r < spec.q; ++r) {
    const int cr = spec.c_r(r);
    Mat blk = st.gamma[r] * mo.dxz.middleRows(ac, cr);
    blk.col(r) += mo.dxi.segment(ac, cr);
    h.block(ok + ac, og, cr, lo.q) = blk;
    h.block(ok + ac, ot, cr, lo.m) = st.gamma[r] * mo.fxi.middleRows(ac, cr);
    ac += cr;
  }
  // alpha-alpha, alpha-kappa, kappa-kappa with gamma_r gamma_s scaling
  ab = 0;
  for (int r = 0; r < spec.q; ++r) {
    int ab2 = 0;
    for (int s = 0; s < spec.q; ++s) {
      h.block(oa + ab, oa + ab2, spec.b_r(r), spec.b_r(s)) =
          st.gamma[r] * st.gamma[s] * mo.dpp.block(ab, ab2, spec.b_r(r), spec.b_r(s));
      ab2 += spec.b_r(s);
    }
    int ac2 = 0;
    for (int s = 0; s < spec.q; ++s) {
      h.block(oa + ab, ok + ac2, spec.b_r(r), spec.c_r(s)) =
          st.gamma[r] * st.gamma[s] * mo.dpx.block(ab, ac2, spec.b_r(r), spec.c_r(s));
      ac2 += spec.c_r(s);
    }
    ab += spec.b_r(r);
  }
  ac = 0;
  for (int r = 0; r < spec.q; ++r) {
    int ac2 = 0;
    for (int s = 0; s < spec.q; ++s) {
      h.block(ok + ac, ok + ac2, spec.c_r(r), spec.c_r(s)) =
          st.gamma[r] * st.gamma[s] * mo.dxx.block(ac, ac2, spec.c_r(r), spec.c_r(s));
      ac2 += spec.c_r(s);
    }
    ac += spec.c_r(r);
  }
  // symmetrize the lower-triangular fills
  h.block(ot, oa, lo.m, lo.B) = h.block(oa, ot, lo.B, lo.m).transpose();
  h.block(ot, ok, lo.m, lo.C) = h.block(ok, ot, lo.C, lo.m).transpose();
  h.block(og, oa, lo.q, lo.B) = h.block(oa, og, lo.B, lo.q).transpose();
  h.block(og, ok, lo.q, lo.C) = h.block(ok, og, lo.C, lo.q).transpose();
  h.block(ok, oa, lo.C, lo.B) = h.block(oa, ok, lo.B, lo.C).transpose();
  h.block(ot, og, lo.m, lo.q) = h.block(og, ot, lo.q, lo.m).transpose();
  return h;
}

// dH and (optionally) d2H at both endpoints for subject i
LocalDerivs local_derivs(const FitWorkspace& ws, int i, const ParameterState& st,
                         Level level) {
  const ModelSpec& spec = ws.spec();
  const auto& c = ws.cache(i);
  const LocalLayout lo(spec);
  const Subject& sub = ws.data().subjects[i];
  const double exb = std::exp(sub.x.dot(st.beta));

  const int nn = static_cast<int>(c.nodes.size());
  Mat z(nn, spec.q);
  Vec w(nn), h0n(nn);
  if (nn > 0) {
    z = ws.z_at_nodes(i, st);
    const Vec zg = z * st.gamma;
    for (int j = 0; j < nn; ++j) w[j] = c.wts[j] * std::exp(zg[j]);
    h0n = c.psi_nodes * st.theta;
  }

  Moments mo_lo = zero_moments(lo, level);
  accumulate_moments(ws, i, z, w, h0n, 0, c.n_lo, level, mo_lo);
  Moments mo_hi = mo_lo;
  accumulate_moments(ws, i, z, w, h0n, c.n_lo, nn, level, mo_hi);

  LocalDerivs ld;
  ld.h_lo = exb * mo_lo.i0;
  ld.h_hi = exb * mo_hi.i0;
  auto build = [&](const Moments& mo, Vec& dh, Mat& d2h) {
    const Vec di0 = assemble_di0(spec, st, mo);
    dh.resize(lo.L);
    dh.head(lo.p) = sub.x * (exb * mo.i0);
    dh.tail(lo.L - lo.p) = exb * di0;
    if (level == Level::Hess) {
      d2h.resize(lo.L, lo.L);
      d2h.topLeftCorner(lo.p, lo.p) = (exb * mo.i0) * (sub.x * sub.x.transpose());
      const Vec rest = exb * di0;
      d2h.topRightCorner(lo.p, lo.L - lo.p) = sub.x * rest.transpose();
      d2h.bottomLeftCorner(lo.L - lo.p, lo.p) = rest * sub.x.transpose();
      d2h.bottomRightCorner(lo.L - lo.p, lo.L - lo.p) = exb * assemble_d2i0(spec, st, mo);
    }
  };
  build(mo_lo, ld.dh_lo, ld.d2h_lo);
  build(mo_hi, ld.dh_hi, ld.d2h_hi);
  return ld;
}

// direct (non-H) gradient contribution of an exact event
void add_exact_direct_grad(const FitWorkspace& ws, int i, const ParameterState& st,
                           Vec& g_local) {
  const ModelSpec& spec = ws.spec();
  const auto& c = ws.cache(i);
  const LocalLayout lo(spec);
  const Subject& sub = ws.data().subjects[i];
  g_local.head(lo.p) += sub.x;
  const double h0t = std::max(c.psi_obs.dot(st.theta), 1e-12);
  g_local.segment(lo.o_theta, lo.m) += c.psi_obs / h0t;
  for (int r = 0; r < spec.q; ++r) {
    double zr = c.phi_at_t[r].dot(st.alpha[r]);
    if (spec.c_r(r) > 0)
      zr += c.xi_at_t[r].dot(st.kappa[i].segment(spec.off_kappa_r(r), spec.c_r(r)));
    g_local[lo.o_gamma + r] += zr;
    g_local.segment(lo.o_alpha + spec.off_alpha(r) - spec.off_alpha(0), spec.b_r(r)) +=
        st.gamma[r] * c.phi_at_t[r];
    g_local.segment(lo.o_kappa + spec.off_kappa_r(r), spec.c_r(r)) +=
        st.gamma[r] * c.xi_at_t[r];
  }
}

void add_exact_direct_hess(const FitWorkspace& ws, int i, const ParameterState& st,
                           Mat& h_local) {
  const ModelSpec& spec = ws.spec();
  const auto& c = ws.cache(i);
  const LocalLayout lo(spec);
  const double h0t = std::max(c.psi_obs.dot(st.theta), 1e-12);
  h_local.block(lo.o_theta, lo.o_theta, lo.m, lo.m) -=
      (c.psi_obs * c.psi_obs.transpose()) / (h0t * h0t);
  int ab = 0, ac = 0;
  for (int r = 0; r < spec.q; ++r) {
    h_local.block(lo.o_gamma + r, lo.o_alpha + ab, 1, spec.b_r(r)) +=
        c.phi_at_t[r].transpose();
    h_local.block(lo.o_alpha + ab, lo.o_gamma + r, spec.b_r(r), 1) += c.phi_at_t[r];
    h_local.block(lo.o_gamma + r, lo.o_kappa + ac, 1, spec.c_r(r)) +=
        c.xi_at_t[r].transpose();
    h_local.block(lo.o_kappa + ac, lo.o_gamma + r, spec.c_r(r), 1) += c.xi_at_t[r];
    ab += spec.b_r(r);
    ac += spec.c_r(r);
  }
}

}  // namespace

Vec ScoreBlocks::flatten(const ModelSpec& spec) const {
  const int n = static_cast<int>(kappa.size());
  Vec g(spec.eta_dim(n));
  g.segment(0, spec.p) = beta;
  g.segment(spec.off_gamma(), spec.q) = gamma;
  g.segment(spec.off_theta(), spec.m()) = theta;
  for (int r = 0; r < spec.q; ++r) g.segment(spec.off_alpha(r), spec.b_r(r)) = alpha[r];
  const int z = spec.zeta_dim(), C = spec.c_total();
  for (int i = 0; i < n; ++i) g.segment(z + i * C, C) = kappa[i];
  return g;
}

ScoreBlocks score(const FitWorkspace& ws, const ParameterState& st,
                  const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const LocalLayout lo(spec);
  const int n = ws.n();

  ScoreBlocks g;
  g.beta = Vec::Zero(spec.p);
  g.gamma = Vec::Zero(spec.q);
  g.theta = Vec::Zero(spec.m());
  g.alpha.resize(spec.q);
  for (int r = 0; r < spec.q; ++r) g.alpha[r] = Vec::Zero(spec.b_r(r));
  g.kappa.assign(n, Vec::Zero(spec.c_total()));

  for (int i = 0; i < n; ++i) {
    const auto& c = ws.cache(i);
    const LocalDerivs ld = local_derivs(ws, i, st, Level::Grad);
    const auto bw = detail::branch_weights(c.st, ld.h_lo, ld.h_hi);
    Vec g_local = bw.g_lo * ld.dh_lo + bw.g_hi * ld.dh_hi;
    if (c.st == CensoringStatus::Exact) add_exact_direct_grad(ws, i, st, g_local);

    // measurement residual terms
    for (int r = 0; r < spec.q; ++r) {
      if (c.z_obs.rows() == 0) break;
      Vec fit = c.phi_obs[r] * st.alpha[r];
      if (spec.c_r(r) > 0)
        fit += c.xi_obs[r] * st.kappa[i].segment(spec.off_kappa_r(r), spec.c_r(r));
      const Vec resid = c.z_obs.col(r) - fit;
      g_local.segment(lo.o_alpha + spec.off_alpha(r) - spec.off_alpha(0), spec.b_r(r)) +=
          (c.phi_obs[r].transpose() * resid) / var.sigma_eps2;
      g_local.segment(lo.o_kappa + spec.off_kappa_r(r), spec.c_r(r)) +=
          (c.xi_obs[r].transpose() * resid) / var.sigma_eps2;
    }
    // random-effect prior
    for (int r = 0; r < spec.q; ++r)
      for (int l = 0; l < spec.c_r(r); ++l)
        g_local[lo.o_kappa + spec.off_kappa_r(r) + l] -=
            st.kappa[i][spec.off_kappa_r(r) + l] / var.sigma_kappa2[r][l];

    g.beta += g_local.head(spec.p);
    g.gamma += g_local.segment(lo.o_gamma, spec.q);
    g.theta += g_local.segment(lo.o_theta, spec.m());
    int ab = 0;
    for (int r = 0; r < spec.q; ++r) {
      g.alpha[r] += g_local.segment(lo.o_alpha + ab, spec.b_r(r));
      ab += spec.b_r(r);
    }
    g.kappa[i] = g_local.segment(lo.o_kappa, spec.c_total());
  }

  // roughness penalties
  const Penalties& pen = ws.pen();
  g.theta -= 2.0 * var.lambda_theta() * (pen.theta.entries * st.theta);
  for (int r = 0; r < spec.q; ++r)
    g.alpha[r] -= 2.0 * var.lambda_alpha(r) * (pen.alpha[r].entries * st.alpha[r]);
  return g;
}

Vec mi_denominators(const Vec& g_theta, double upsilon) {
  Vec d(g_theta.size());
  for (int u = 0; u < g_theta.size(); ++u)
    d[u] = std::max(-g_theta[u], 0.0) + upsilon;
  return d;
}

Vec mi_denominators_structural(const FitWorkspace& ws, const ParameterState& st,
                               const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const int m = spec.m();
  Vec d = Vec::Zero(m);
  for (int i = 0; i < ws.n(); ++i) {
    const auto& c = ws.cache(i);
    const Subject& sub = ws.data().subjects[i];
    const double exb = std::exp(sub.x.dot(st.beta));
    const int nn = static_cast<int>(c.nodes.size());
    if (nn == 0) continue;
    const Mat z = ws.z_at_nodes(i, st);
    const Vec zg = z * st.gamma;
    Vec psi_lo = Vec::Zero(m), psi_hi = Vec::Zero(m);
    double i_lo = 0.0, i_hi = 0.0;
    const Vec h0n = c.psi_nodes * st.theta;
    for (int j = 0; j < nn; ++j) {
      const double w = c.wts[j] * std::exp(zg[j]);
      psi_hi += w * c.psi_nodes.row(j).transpose();
      i_hi += w * h0n[j];
      if (j < c.n_lo) {
        psi_lo += w * c.psi_nodes.row(j).transpose();
        i_lo += w * h0n[j];
      }
    }
    if (c.st != CensoringStatus::Interval) {
      psi_lo = psi_hi;
      i_lo = i_hi;
    }
    switch (c.st) {
      case CensoringStatus::Exact:
      case CensoringStatus::Right:
        d += exb * psi_hi;
        break;
      case CensoringStatus::Interval: {
        const auto bw = detail::branch_weights(c.st, exb * i_lo, exb * i_hi);
        d += (-bw.g_lo) * exb * psi_lo;  // w_L Psi*(t_L)
        break;
      }
      case CensoringStatus::Left:
        break;
    }
  }
  const Vec pen_grad = 2.0 * var.lambda_theta() * (ws.pen().theta.entries * st.theta);
  for (int u = 0; u < m; ++u) d[u] += std::max(pen_grad[u], 0.0);
  return d;
}

BetaWeights beta_weights(const FitWorkspace& ws, const ParameterState& st) {
  const int n = ws.n();
  BetaWeights w;
  w.a = Vec::Zero(n);
  w.c = Vec::Zero(n);
  w.delta = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    const auto& c = ws.cache(i);
    // only H at the endpoints matters for the beta weights
    const ModelSpec& spec = ws.spec();
    const Subject& sub = ws.data().subjects[i];
    const double exb = std::exp(sub.x.dot(st.beta));
    const int nn = static_cast<int>(c.nodes.size());
    double i_lo = 0.0, i_hi = 0.0;
    if (nn > 0) {
      const Mat z = ws.z_at_nodes(i, st);
      const Vec zg = z * st.gamma;
      const Vec h0n = c.psi_nodes * st.theta;
      for (int j = 0; j < nn; ++j) {
        const double v = c.wts[j] * h0n[j] * std::exp(zg[j]);
        i_hi += v;
        if (j < c.n_lo) i_lo += v;
      }
    }
    if (c.st != CensoringStatus::Interval) i_lo = i_hi;
    (void)spec;
    const double h_lo = exb * i_lo, h_hi = exb * i_hi;
    const auto bw = detail::branch_weights(c.st, h_lo, h_hi);
    w.a[i] = -(bw.g_lo * h_lo + bw.g_hi * h_hi);
    w.c[i] = -(bw.m_lo * h_lo + bw.m_hi * h_hi + bw.h_ll * h_lo * h_lo +
               bw.h_hh * h_hi * h_hi + 2.0 * bw.h_lh * h_lo * h_hi);
    w.delta[i] = (c.st == CensoringStatus::Exact) ? 1.0 : 0.0;
  }
  return w;
}

namespace {

// survival-part local Hessian for one subject (exact-event direct terms included)
Mat subject_survival_hessian(const FitWorkspace& ws, int i, const ParameterState& st) {
  const auto& c = ws.cache(i);
  const LocalDerivs ld = local_derivs(ws, i, st, Level::Hess);
  const auto bw = detail::branch_weights(c.st, ld.h_lo, ld.h_hi);
  Mat h = bw.m_lo * ld.d2h_lo + bw.m_hi * ld.d2h_hi;
  if (bw.h_ll != 0.0) h += bw.h_ll * (ld.dh_lo * ld.dh_lo.transpose());
  if (bw.h_hh != 0.0) h += bw.h_hh * (ld.dh_hi * ld.dh_hi.transpose());
  if (bw.h_lh != 0.0)
    h += bw.h_lh * (ld.dh_lo * ld.dh_hi.transpose() + ld.dh_hi * ld.dh_lo.transpose());
  if (c.st == CensoringStatus::Exact) add_exact_direct_hess(ws, i, st, h);
  return h;
}

}  // namespace

Mat hess_gamma(const FitWorkspace& ws, const ParameterState& st) {
  const ModelSpec& spec = ws.spec();
  const LocalLayout lo(spec);
  Mat h = Mat::Zero(spec.q, spec.q);
  for (int i = 0; i < ws.n(); ++i)
    h += subject_survival_hessian(ws, i, st).block(lo.o_gamma, lo.o_gamma, spec.q, spec.q);
  return h;
}

Mat hess_alpha(const FitWorkspace& ws, const ParameterState& st,
               const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const LocalLayout lo(spec);
  const int B = spec.b_total();
  Mat h = Mat::Zero(B, B);
  for (int i = 0; i < ws.n(); ++i) {
    h += subject_survival_hessian(ws, i, st).block(lo.o_alpha, lo.o_alpha, B, B);
    const auto& c = ws.cache(i);
    int ab = 0;
    for (int r = 0; r < spec.q; ++r) {
      if (c.z_obs.rows() > 0)
        h.block(ab, ab, spec.b_r(r), spec.b_r(r)) -= c.g_pp[r] / var.sigma_eps2;
      ab += spec.b_r(r);
    }
  }
  const Penalties& pen = ws.pen();
  int ab = 0;
  for (int r = 0; r < spec.q; ++r) {
    h.block(ab, ab, spec.b_r(r), spec.b_r(r)) -=
        2.0 * var.lambda_alpha(r) * pen.alpha[r].entries;
    ab += spec.b_r(r);
  }
  return h;
}

Mat hess_zeta(const FitWorkspace& ws, const ParameterState& st,
              const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const int dz = spec.zeta_dim();
  Mat h = Mat::Zero(dz, dz);
  for (int i = 0; i < ws.n(); ++i) {
    h += subject_survival_hessian(ws, i, st).topLeftCorner(dz, dz);
    const auto& c = ws.cache(i);
    if (c.z_obs.rows() > 0) {
      int ab = 0;
      for (int r = 0; r < spec.q; ++r) {
        const int oa = spec.off_alpha(0) + ab;
        h.block(oa, oa, spec.b_r(r), spec.b_r(r)) -= c.g_pp[r] / var.sigma_eps2;
        ab += spec.b_r(r);
      }
    }
  }
  const Penalties& pen = ws.pen();
  h.block(spec.off_theta(), spec.off_theta(), spec.m(), spec.m()) -=
      2.0 * var.lambda_theta() * pen.theta.entries;
  for (int r = 0; r < spec.q; ++r)
    h.block(spec.off_alpha(r), spec.off_alpha(r), spec.b_r(r), spec.b_r(r)) -=
        2.0 * var.lambda_alpha(r) * pen.alpha[r].entries;
  return h;
}

std::vector<Mat> hess_kappa(const FitWorkspace& ws, const ParameterState& st,
                            const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const LocalLayout lo(spec);
  const int C = spec.c_total();
  std::vector<Mat> out(ws.n());
  for (int i = 0; i < ws.n(); ++i) {
    Mat h = subject_survival_hessian(ws, i, st).block(lo.o_kappa, lo.o_kappa, C, C);
    const auto& c = ws.cache(i);
    int ac = 0;
    for (int r = 0; r < spec.q; ++r) {
      if (c.z_obs.rows() > 0)
        h.block(ac, ac, spec.c_r(r), spec.c_r(r)) -= c.g_xx[r] / var.sigma_eps2;
      for (int l = 0; l < spec.c_r(r); ++l)
        h(ac + l, ac + l) -= 1.0 / var.sigma_kappa2[r][l];
      ac += spec.c_r(r);
    }
    out[i] = std::move(h);
  }
  return out;
}

HessianAssembly negative_hessian(const FitWorkspace& ws, const ParameterState& st,
                                 const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const LocalLayout lo(spec);
  const int n = ws.n();
  HessianAssembly A;
  A.dim_z = spec.zeta_dim();
  A.ck = spec.c_total();
  A.n = n;
  A.sigma_eps2 = var.sigma_eps2;
  A.F_zz = Mat::Zero(A.dim_z, A.dim_z);
  A.F_zk = Mat::Zero(A.dim_z, n * A.ck);
  A.F_kk.assign(n, Mat::Zero(A.ck, A.ck));
  A.Ge_zz = Mat::Zero(A.dim_z, A.dim_z);
  A.Ge_zk = Mat::Zero(A.dim_z, n * A.ck);
  A.Ge_kk.assign(n, Mat::Zero(A.ck, A.ck));

  for (int i = 0; i < n; ++i) {
    const Mat h = subject_survival_hessian(ws, i, st);
    A.F_zz -= h.topLeftCorner(A.dim_z, A.dim_z);
    if (A.ck > 0) {
      A.F_zk.middleCols(i * A.ck, A.ck) -= h.topRightCorner(A.dim_z, A.ck);
      A.F_kk[i] -= h.bottomRightCorner(A.ck, A.ck);
    }
    // measurement Grams
    const auto& c = ws.cache(i);
    if (c.z_obs.rows() > 0) {
      int ab = 0, ac = 0;
      for (int r = 0; r < spec.q; ++r) {
        const int oa = spec.off_alpha(0) + ab;
        A.Ge_zz.block(oa, oa, spec.b_r(r), spec.b_r(r)) += c.g_pp[r];
        A.Ge_zk.block(oa, i * A.ck + ac, spec.b_r(r), spec.c_r(r)) += c.g_px[r];
        A.Ge_kk[i].block(ac, ac, spec.c_r(r), spec.c_r(r)) += c.g_xx[r];
        ab += spec.b_r(r);
        ac += spec.c_r(r);
      }
    }
  }
  (void)lo;

  // penalty blocks
  const Penalties& pen = ws.pen();
  A.Qtheta_zz = Mat::Zero(A.dim_z, A.dim_z);
  A.Qtheta_zz.block(spec.off_theta(), spec.off_theta(), spec.m(), spec.m()) =
      pen.theta.entries / var.sigma_theta2;
  A.Qalpha_each.resize(spec.q);
  for (int r = 0; r < spec.q; ++r) {
    A.Qalpha_each[r] = Mat::Zero(A.dim_z, A.dim_z);
    A.Qalpha_each[r].block(spec.off_alpha(r), spec.off_alpha(r), spec.b_r(r), spec.b_r(r)) =
        pen.alpha[r].entries / var.sigma_alpha2[r];
  }

  A.kappa_prec = Vec::Zero(A.ck);
  for (int r = 0; r < spec.q; ++r)
    for (int l = 0; l < spec.c_r(r); ++l)
      A.kappa_prec[spec.off_kappa_r(r) + l] = 1.0 / var.sigma_kappa2[r][l];

  // fold the structured pieces into F
  A.F_zz += A.Qtheta_zz;
  for (int r = 0; r < spec.q; ++r) A.F_zz += A.Qalpha_each[r];
  A.F_zz += A.Ge_zz / var.sigma_eps2;
  A.F_zk += A.Ge_zk / var.sigma_eps2;
  for (int i = 0; i < n; ++i) {
    A.F_kk[i] += A.Ge_kk[i] / var.sigma_eps2;
    A.F_kk[i] += A.kappa_prec.asDiagonal();
  }
  return A;
}

Mat HessianAssembly::dense() const {
  const int d = dim_z + n * ck;
  Mat F = Mat::Zero(d, d);
  F.topLeftCorner(dim_z, dim_z) = F_zz;
  if (ck > 0) {
    F.topRightCorner(dim_z, n * ck) = F_zk;
    F.bottomLeftCorner(n * ck, dim_z) = F_zk.transpose();
    for (int i = 0; i < n; ++i)
      F.block(dim_z + i * ck, dim_z + i * ck, ck, ck) = F_kk[i];
  }
  return F;
}

Mat HessianAssembly::dense_loglik_hessian() const {
  Mat M = dense();
  M.topLeftCorner(dim_z, dim_z) -= Qtheta_zz;
  for (const auto& qa : Qalpha_each) M.topLeftCorner(dim_z, dim_z) -= qa;
  return M;
}

Mat HessianAssembly::dense_survival_part() const {
  Mat H = dense_loglik_hessian();
  H.topLeftCorner(dim_z, dim_z) -= Ge_zz / sigma_eps2;
  if (ck > 0) {
    H.topRightCorner(dim_z, n * ck) -= Ge_zk / sigma_eps2;
    H.bottomLeftCorner(n * ck, dim_z) -= (Ge_zk / sigma_eps2).transpose();
    for (int i = 0; i < n; ++i) {
      H.block(dim_z + i * ck, dim_z + i * ck, ck, ck) -= Ge_kk[i] / sigma_eps2;
      H.block(dim_z + i * ck, dim_z + i * ck, ck, ck) -=
          Mat(kappa_prec.asDiagonal());
    }
  }
  return H;
}

Mat HessianAssembly::dense_Qeps() const {
  const int d = dim_z + n * ck;
  Mat Q = Mat::Zero(d, d);
  Q.topLeftCorner(dim_z, dim_z) = Ge_zz / sigma_eps2;
  if (ck > 0) {
    Q.topRightCorner(dim_z, n * ck) = Ge_zk / sigma_eps2;
    Q.bottomLeftCorner(n * ck, dim_z) = (Ge_zk / sigma_eps2).transpose();
    for (int i = 0; i < n; ++i)
      Q.block(dim_z + i * ck, dim_z + i * ck, ck, ck) = Ge_kk[i] / sigma_eps2;
  }
  return Q;
}

Mat HessianAssembly::dense_Qkappa(int coord) const {
  const int d = dim_z + n * ck;
  Mat Q = Mat::Zero(d, d);
  for (int i = 0; i < n; ++i)
    Q(dim_z + i * ck + coord, dim_z + i * ck + coord) = kappa_prec[coord];
  return Q;
}

}  // namespace icjm
