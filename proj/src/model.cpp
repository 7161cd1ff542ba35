#include "icjm/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "survival_terms.hpp"

namespace icjm {

using nlohmann::json;

// ---------------------------------------------------------------- trajectory design

int FixedTrajDesign::dim() const {
  int d = time_basis.size();
  for (const auto& it : interactions) d += it.cols;
  return d;
}

Vec FixedTrajDesign::row(double t, const Vec& w) const {
  const Vec base = time_basis.eval(t);
  Vec out(dim());
  out.head(base.size()) = base;
  int at = static_cast<int>(base.size());
  for (const auto& it : interactions) {
    if (it.w_index >= w.size())
      throw std::out_of_range("trajectory design: interaction covariate index");
    out.segment(at, it.cols) = w[it.w_index] * base.head(it.cols);
    at += it.cols;
  }
  return out;
}

PenaltyMatrix FixedTrajDesign::penalty() const {
  // smoothing applies to spline mean trajectories; a polynomial design has
  // too few coefficients for a roughness prior to mean anything
  if (time_basis.family() == BasisFamily::Polynomial) {
    PenaltyMatrix pm;
    pm.zero_penalty = true;
    pm.entries = Mat::Zero(dim(), dim());
    return pm;
  }
  const PenaltyMatrix base = time_basis.penalty_matrix();
  PenaltyMatrix pm;
  pm.zero_penalty = base.zero_penalty;
  pm.entries = Mat::Zero(dim(), dim());
  pm.entries.topLeftCorner(base.entries.rows(), base.entries.cols()) = base.entries;
  int at = static_cast<int>(base.entries.rows());
  for (const auto& it : interactions) {
    pm.entries.block(at, at, it.cols, it.cols) = base.entries.topLeftCorner(it.cols, it.cols);
    at += it.cols;
  }
  return pm;
}

// ---------------------------------------------------------------- spec layout

int ModelSpec::b_total() const {
  int b = 0;
  for (const auto& f : fixed) b += f.dim();
  return b;
}

int ModelSpec::c_total() const {
  int c = 0;
  for (const auto& r : random) c += r.size();
  return c;
}

int ModelSpec::off_alpha(int r) const {
  int off = p + q + m();
  for (int s = 0; s < r; ++s) off += fixed[s].dim();
  return off;
}

int ModelSpec::off_kappa_r(int r) const {
  int off = 0;
  for (int s = 0; s < r; ++s) off += random[s].size();
  return off;
}

std::vector<std::string> ModelSpec::zeta_names() const {
  std::vector<std::string> names;
  for (int j = 1; j <= p; ++j) names.push_back("beta" + std::to_string(j));
  for (int j = 1; j <= q; ++j) names.push_back("gamma" + std::to_string(j));
  for (int j = 1; j <= m(); ++j) names.push_back("theta" + std::to_string(j));
  for (int r = 0; r < q; ++r)
    for (int j = 0; j < fixed[r].dim(); ++j)
      names.push_back(q == 1 ? "alpha" + std::to_string(j)
                             : "alpha_r" + std::to_string(r + 1) + "_" + std::to_string(j));
  return names;
}

std::uint64_t ModelSpec::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto eat_d = [&h](double v) {
    const auto* b = reinterpret_cast<const unsigned char*>(&v);
    for (size_t i = 0; i < sizeof(v); ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  eat_d(p);
  eat_d(q);
  eat_d(pz);
  eat_d(static_cast<double>(baseline.family()));
  eat_d(baseline.order());
  for (double k : baseline.knots()) eat_d(k);
  for (const auto& f : fixed) {
    eat_d(static_cast<double>(f.time_basis.family()));
    eat_d(f.time_basis.order());
    for (double k : f.time_basis.knots()) eat_d(k);
    for (const auto& it : f.interactions) {
      eat_d(it.w_index);
      eat_d(it.cols);
    }
  }
  for (const auto& r : random) {
    eat_d(static_cast<double>(r.family()));
    eat_d(r.order());
    for (double k : r.knots()) eat_d(k);
  }
  return h;
}

// ---------------------------------------------------------------- parameter state

ParameterState ParameterState::zeros(const ModelSpec& spec, int n) {
  ParameterState s;
  s.beta = Vec::Zero(spec.p);
  s.gamma = Vec::Zero(spec.q);
  s.theta = Vec::Zero(spec.m());
  s.alpha.resize(spec.q);
  for (int r = 0; r < spec.q; ++r) s.alpha[r] = Vec::Zero(spec.b_r(r));
  s.kappa.assign(n, Vec::Zero(spec.c_total()));
  return s;
}

Vec ParameterState::flatten(const ModelSpec& spec) const {
  const int n = static_cast<int>(kappa.size());
  Vec eta(spec.eta_dim(n));
  eta.segment(0, spec.p) = beta;
  eta.segment(spec.off_gamma(), spec.q) = gamma;
  eta.segment(spec.off_theta(), spec.m()) = theta;
  for (int r = 0; r < spec.q; ++r) eta.segment(spec.off_alpha(r), spec.b_r(r)) = alpha[r];
  const int z = spec.zeta_dim(), C = spec.c_total();
  for (int i = 0; i < n; ++i) eta.segment(z + i * C, C) = kappa[i];
  return eta;
}

void ParameterState::unflatten(const ModelSpec& spec, const Vec& eta) {
  const int n = static_cast<int>(kappa.size());
  beta = eta.segment(0, spec.p);
  gamma = eta.segment(spec.off_gamma(), spec.q);
  theta = eta.segment(spec.off_theta(), spec.m());
  for (int r = 0; r < spec.q; ++r) alpha[r] = eta.segment(spec.off_alpha(r), spec.b_r(r));
  const int z = spec.zeta_dim(), C = spec.c_total();
  for (int i = 0; i < n; ++i) kappa[i] = eta.segment(z + i * C, C);
}

double ParameterState::max_abs_diff(const ParameterState& other) const {
  double d = 0.0;
  auto upd = [&d](const Vec& a, const Vec& b) {
    if (a.size() > 0) d = std::max(d, (a - b).cwiseAbs().maxCoeff());
  };
  upd(beta, other.beta);
  upd(gamma, other.gamma);
  upd(theta, other.theta);
  for (size_t r = 0; r < alpha.size(); ++r) upd(alpha[r], other.alpha[r]);
  for (size_t i = 0; i < kappa.size(); ++i) upd(kappa[i], other.kappa[i]);
  return d;
}

VarianceComponents VarianceComponents::ones(const ModelSpec& spec) {
  VarianceComponents v;
  v.sigma_eps2 = 1.0;
  v.sigma_theta2 = 0.5;
  v.sigma_alpha2 = Vec::Constant(spec.q, 0.5);
  v.sigma_kappa2.resize(spec.q);
  for (int r = 0; r < spec.q; ++r) v.sigma_kappa2[r] = Vec::Ones(spec.c_r(r));
  return v;
}

Vec VarianceComponents::flatten() const {
  int d = 2 + static_cast<int>(sigma_alpha2.size());
  for (const auto& k : sigma_kappa2) d += static_cast<int>(k.size());
  Vec v(d);
  int at = 0;
  v[at++] = sigma_eps2;
  v[at++] = sigma_theta2;
  for (int r = 0; r < sigma_alpha2.size(); ++r) v[at++] = sigma_alpha2[r];
  for (const auto& k : sigma_kappa2)
    for (int l = 0; l < k.size(); ++l) v[at++] = k[l];
  return v;
}

double VarianceComponents::max_rel_change(const VarianceComponents& other) const {
  const Vec a = flatten(), b = other.flatten();
  double d = 0.0;
  for (int j = 0; j < a.size(); ++j)
    d = std::max(d, std::abs(a[j] - b[j]) / std::max(std::abs(b[j]), 1e-12));
  return d;
}

// ---------------------------------------------------------------- penalties

Penalties::Penalties(const ModelSpec& spec) : theta(spec.baseline.penalty_matrix()) {
  alpha.reserve(spec.q);
  for (int r = 0; r < spec.q; ++r) alpha.push_back(spec.fixed[r].penalty());
}

const Penalties& penalties(const FitWorkspace& ws) { return ws.pen(); }

// ---------------------------------------------------------------- workspace

FitWorkspace::FitWorkspace(const Dataset& ds, const ModelSpec& spec)
    : ds_(&ds), spec_(&spec), pen_(std::make_shared<Penalties>(spec)) {
  if (ds.q != spec.q) throw std::invalid_argument("workspace: dataset q != spec q");
  if (ds.p != spec.p) throw std::invalid_argument("workspace: dataset p != spec p");
  const int n = ds.n();
  cache_.resize(n);
  const auto& knots = spec.baseline.knots();
  for (int i = 0; i < n; ++i) {
    const Subject& s = ds.subjects[i];
    SubjCache& c = cache_[i];
    c.st = s.status;
    c.t_hi = s.obs_time();
    c.t_lo = (s.status == CensoringStatus::Interval) ? s.t_left : c.t_hi;

    // composite rule split at baseline knots and at t_lo
    std::vector<double> brk{0.0};
    for (double k : knots)
      if (k > 0.0 && k < c.t_hi) brk.push_back(k);
    if (c.st == CensoringStatus::Interval && c.t_lo > 0.0 && c.t_lo < c.t_hi)
      brk.push_back(c.t_lo);
    if (c.t_hi > 0.0) brk.push_back(c.t_hi);
    std::sort(brk.begin(), brk.end());
    brk.erase(std::unique(brk.begin(), brk.end()), brk.end());

    std::vector<double> nodes, wts;
    c.n_lo = 0;
    for (size_t sgm = 0; sgm + 1 < brk.size(); ++sgm) {
      const auto rule = quadrature(brk[sgm], brk[sgm + 1], kNodesPerSegment);
      nodes.insert(nodes.end(), rule.nodes.begin(), rule.nodes.end());
      wts.insert(wts.end(), rule.weights.begin(), rule.weights.end());
      if (brk[sgm + 1] <= c.t_lo) c.n_lo += kNodesPerSegment;
    }
    const int nn = static_cast<int>(nodes.size());
    c.nodes = Eigen::Map<Vec>(nodes.data(), nn);
    c.wts = Eigen::Map<Vec>(wts.data(), nn);
    if (c.st != CensoringStatus::Interval) c.n_lo = nn;

    c.psi_nodes.resize(nn, spec.m());
    for (int j = 0; j < nn; ++j) c.psi_nodes.row(j) = spec.baseline.eval(c.nodes[j]).transpose();
    c.phi_nodes.resize(spec.q);
    c.xi_nodes.resize(spec.q);
    for (int r = 0; r < spec.q; ++r) {
      c.phi_nodes[r].resize(nn, spec.b_r(r));
      c.xi_nodes[r].resize(nn, spec.c_r(r));
      for (int j = 0; j < nn; ++j) {
        c.phi_nodes[r].row(j) = spec.fixed[r].row(c.nodes[j], s.long_fixed).transpose();
        c.xi_nodes[r].row(j) = spec.random[r].eval(c.nodes[j]).transpose();
      }
    }

    if (c.st == CensoringStatus::Exact) {
      c.psi_obs = spec.baseline.eval(c.t_hi);
      c.phi_at_t.resize(spec.q);
      c.xi_at_t.resize(spec.q);
      for (int r = 0; r < spec.q; ++r) {
        c.phi_at_t[r] = spec.fixed[r].row(c.t_hi, s.long_fixed);
        c.xi_at_t[r] = spec.random[r].eval(c.t_hi);
      }
    }

    const int ni = static_cast<int>(s.longitudinal.size());
    n_obs_ += ni;
    c.z_obs.resize(ni, spec.q);
    c.phi_obs.resize(spec.q);
    c.xi_obs.resize(spec.q);
    c.g_pp.resize(spec.q);
    c.g_px.resize(spec.q);
    c.g_xx.resize(spec.q);
    for (int r = 0; r < spec.q; ++r) {
      c.phi_obs[r].resize(ni, spec.b_r(r));
      c.xi_obs[r].resize(ni, spec.c_r(r));
    }
    for (int a = 0; a < ni; ++a) {
      const auto& rec = s.longitudinal[a];
      for (int r = 0; r < spec.q; ++r) {
        c.z_obs(a, r) = rec.values[r];
        c.phi_obs[r].row(a) = spec.fixed[r].row(rec.time, s.long_fixed).transpose();
        c.xi_obs[r].row(a) = spec.random[r].eval(rec.time).transpose();
      }
    }
    for (int r = 0; r < spec.q; ++r) {
      c.g_pp[r] = c.phi_obs[r].transpose() * c.phi_obs[r];
      c.g_px[r] = c.phi_obs[r].transpose() * c.xi_obs[r];
      c.g_xx[r] = c.xi_obs[r].transpose() * c.xi_obs[r];
    }
  }
}

Mat FitWorkspace::z_at_nodes(int i, const ParameterState& s) const {
  const SubjCache& c = cache_[i];
  const int nn = static_cast<int>(c.nodes.size());
  Mat z(nn, spec_->q);
  for (int r = 0; r < spec_->q; ++r) {
    z.col(r) = c.phi_nodes[r] * s.alpha[r];
    if (spec_->c_r(r) > 0)
      z.col(r) += c.xi_nodes[r] * s.kappa[i].segment(spec_->off_kappa_r(r), spec_->c_r(r));
  }
  return z;
}

// ---------------------------------------------------------------- point evaluation

double trajectory(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
                  int subject, int r, double t) {
  if (subject < 0 || subject >= ds.n()) throw std::out_of_range("trajectory: subject index");
  if (r < 0 || r >= spec.q) throw std::out_of_range("trajectory: covariate index");
  if (t < 0) throw std::domain_error("trajectory: t >= 0 required");
  const Subject& sub = ds.subjects[subject];
  double v = spec.fixed[r].row(t, sub.long_fixed).dot(s.alpha[r]);
  if (spec.c_r(r) > 0)
    v += spec.random[r].eval(t).dot(s.kappa[subject].segment(spec.off_kappa_r(r), spec.c_r(r)));
  return v;
}

double hazard(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
              int subject, double t) {
  const Subject& sub = ds.subjects[subject];
  const double h0 = spec.baseline.eval(t).dot(s.theta);
  double lin = sub.x.dot(s.beta);
  for (int r = 0; r < spec.q; ++r) lin += s.gamma[r] * trajectory(spec, s, ds, subject, r, t);
  return h0 * std::exp(lin);
}

double cumulative_hazard(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
                         int subject, double t) {
  if (t < 0) throw std::domain_error("cumulative_hazard: t >= 0 required");
  if (t == 0.0) return 0.0;
  const Subject& sub = ds.subjects[subject];
  std::vector<double> brk{0.0};
  for (double k : spec.baseline.knots())
    if (k > 0.0 && k < t) brk.push_back(k);
  brk.push_back(t);
  std::sort(brk.begin(), brk.end());
  brk.erase(std::unique(brk.begin(), brk.end()), brk.end());
  double acc = 0.0;
  for (size_t sgm = 0; sgm + 1 < brk.size(); ++sgm) {
    const auto rule = quadrature(brk[sgm], brk[sgm + 1], FitWorkspace::kNodesPerSegment);
    for (size_t j = 0; j < rule.nodes.size(); ++j) {
      const double u = rule.nodes[j];
      const double h0 = spec.baseline.eval(u).dot(s.theta);
      double zg = 0.0;
      for (int r = 0; r < spec.q; ++r) zg += s.gamma[r] * trajectory(spec, s, ds, subject, r, u);
      acc += rule.weights[j] * h0 * std::exp(zg);
    }
  }
  return std::exp(sub.x.dot(s.beta)) * acc;
}

double survival(const ModelSpec& spec, const ParameterState& s, const Dataset& ds,
                int subject, double t) {
  return std::exp(-cumulative_hazard(spec, s, ds, subject, t));
}

// ---------------------------------------------------------------- likelihood

double log_likelihood(const FitWorkspace& ws, const ParameterState& st,
                      const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const Dataset& ds = ws.data();
  const int n = ws.n();
  double lik = 0.0;
  double ssr = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& c = ws.cache(i);
    const Subject& sub = ds.subjects[i];
    const double exb = std::exp(sub.x.dot(st.beta));
    const int nn = static_cast<int>(c.nodes.size());
    double i_lo = 0.0, i_hi = 0.0;
    double zg_at_t = 0.0;
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
    const double h_lo = exb * i_lo, h_hi = exb * i_hi;
    double li = detail::branch_loglik(c.st, h_lo, h_hi);
    if (c.st == CensoringStatus::Exact) {
      const double h0t = c.psi_obs.dot(st.theta);
      if (h0t <= 0.0) return detail::kNegInf;
      for (int r = 0; r < spec.q; ++r) {
        double zr = c.phi_at_t[r].dot(st.alpha[r]);
        if (spec.c_r(r) > 0)
          zr += c.xi_at_t[r].dot(st.kappa[i].segment(spec.off_kappa_r(r), spec.c_r(r)));
        zg_at_t += st.gamma[r] * zr;
      }
      li += std::log(h0t) + sub.x.dot(st.beta) + zg_at_t;
    }
    if (!std::isfinite(li)) return detail::kNegInf;
    lik += li;

    // measurement residuals
    const int ni = static_cast<int>(sub.longitudinal.size());
    for (int r = 0; r < spec.q; ++r) {
      if (ni == 0) break;
      Vec fit = c.phi_obs[r] * st.alpha[r];
      if (spec.c_r(r) > 0)
        fit += c.xi_obs[r] * st.kappa[i].segment(spec.off_kappa_r(r), spec.c_r(r));
      ssr += (c.z_obs.col(r) - fit).squaredNorm();
    }
  }

  const double n_eff = static_cast<double>(ws.total_obs()) * spec.q;
  if (n_eff > 0)
    lik += -0.5 * ssr / var.sigma_eps2 - 0.5 * n_eff * std::log(var.sigma_eps2);

  // random-effect prior
  for (int r = 0; r < spec.q; ++r) {
    for (int l = 0; l < spec.c_r(r); ++l) {
      const double s2 = var.sigma_kappa2[r][l];
      lik += -0.5 * n * std::log(s2);
      double ssq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double k = st.kappa[i][spec.off_kappa_r(r) + l];
        ssq += k * k;
      }
      lik += -0.5 * ssq / s2;
    }
  }
  return lik;
}

double penalised_objective(const FitWorkspace& ws, const ParameterState& st,
                           const VarianceComponents& var) {
  const double lik = log_likelihood(ws, st, var);
  if (!std::isfinite(lik)) return lik;
  const Penalties& pen = ws.pen();
  double phi = lik - var.lambda_theta() * st.theta.dot(pen.theta.entries * st.theta);
  for (int r = 0; r < ws.spec().q; ++r)
    phi -= var.lambda_alpha(r) * st.alpha[r].dot(pen.alpha[r].entries * st.alpha[r]);
  return phi;
}

// ---------------------------------------------------------------- spec building

namespace {

BasisSet build_time_basis(const std::string& family, int degree, int size,
                          const std::vector<double>& interior, double lo, double hi,
                          const std::vector<double>& obs_times) {
  const BasisFamily fam = basis_family_from_string(family);
  switch (fam) {
    case BasisFamily::Polynomial:
      return BasisSet::polynomial(degree, lo, hi);
    case BasisFamily::Indicator: {
      std::vector<double> edges{lo};
      for (double k : interior) edges.push_back(k);
      edges.push_back(hi);
      return BasisSet::indicator(edges);
    }
    default: {
      const int order = 4;  // cubic pieces for trajectory splines
      std::vector<double> knots{lo};
      if (!interior.empty()) {
        for (double k : interior) knots.push_back(k);
      } else {
        const int n_int = std::max(0, size - order);
        std::vector<double> ts(obs_times);
        if (ts.empty()) ts = {lo, hi};
        std::sort(ts.begin(), ts.end());
        for (int j = 1; j <= n_int; ++j) {
          const double pos = static_cast<double>(j) / (n_int + 1) * (ts.size() - 1);
          const size_t k = static_cast<size_t>(pos);
          knots.push_back(k + 1 < ts.size() ? ts[k] + (pos - k) * (ts[k + 1] - ts[k]) : ts.back());
        }
      }
      knots.push_back(hi);
      return fam == BasisFamily::MSpline ? BasisSet::mspline(knots, order)
                                         : BasisSet::bspline(knots, order);
    }
  }
}

}  // namespace

ModelSpec build_model_spec(const ModelSpecConfig& cfg, const Dataset& ds) {
  ModelSpec spec;
  spec.p = ds.p;
  spec.q = ds.q;
  spec.pz = ds.pz;
  if (static_cast<int>(cfg.longitudinal.size()) != ds.q)
    throw std::invalid_argument("model spec: need one longitudinal block per z covariate");

  // baseline knots: finite interval endpoints with 0 prepended
  std::vector<double> endpoints{0.0};
  double t_max = 0.0;
  for (const auto& s : ds.subjects) {
    if (s.t_left > 0.0) endpoints.push_back(s.t_left);
    if (std::isfinite(s.t_right) && s.t_right > 0.0) endpoints.push_back(s.t_right);
    t_max = std::max(t_max, s.obs_time());
    for (const auto& rec : s.longitudinal) t_max = std::max(t_max, rec.time);
  }
  if (!cfg.baseline_knots.empty()) {
    const BasisFamily fam = basis_family_from_string(cfg.baseline_family);
    if (fam == BasisFamily::Indicator)
      spec.baseline = BasisSet::indicator(cfg.baseline_knots);
    else if (fam == BasisFamily::BSpline)
      spec.baseline = BasisSet::bspline(cfg.baseline_knots, cfg.baseline_order);
    else
      spec.baseline = BasisSet::mspline(cfg.baseline_knots, cfg.baseline_order);
  } else {
    const int m = cfg.baseline_m > 0
                      ? cfg.baseline_m
                      : default_basis_size(ds.n0(), cfg.baseline_order);
    spec.baseline = default_knots(endpoints, m, cfg.baseline_order,
                                  basis_family_from_string(cfg.baseline_family));
  }

  std::vector<double> obs_times;
  for (const auto& s : ds.subjects)
    for (const auto& rec : s.longitudinal) obs_times.push_back(rec.time);
  const double span_hi = std::max(t_max, 1e-8);

  for (int r = 0; r < ds.q; ++r) {
    const TrajConfig& tc = cfg.longitudinal[r];
    FixedTrajDesign fd{build_time_basis(tc.family, tc.degree, tc.size, tc.interior_knots,
                                        0.0, span_hi, obs_times),
                       tc.interactions};
    for (const auto& it : fd.interactions) {
      if (it.w_index < 0 || it.w_index >= ds.pz)
        throw std::invalid_argument("model spec: interaction covariate out of range");
      if (it.cols < 1 || it.cols > fd.time_basis.size())
        throw std::invalid_argument("model spec: interaction column count out of range");
    }
    spec.fixed.push_back(std::move(fd));
    spec.random.push_back(build_time_basis(tc.random_family, tc.random_degree, tc.random_size,
                                           tc.random_interior_knots, 0.0, span_hi, obs_times));
  }
  return spec;
}

std::string model_spec_config_to_json(const ModelSpecConfig& cfg) {
  json j;
  j["schema_version"] = 1;
  j["baseline"] = {{"family", cfg.baseline_family},
                   {"order", cfg.baseline_order},
                   {"m", cfg.baseline_m}};
  if (!cfg.baseline_knots.empty()) j["baseline"]["knots"] = cfg.baseline_knots;
  j["longitudinal"] = json::array();
  for (const auto& tc : cfg.longitudinal) {
    json t;
    t["time_basis"] = {{"family", tc.family}, {"degree", tc.degree}, {"size", tc.size}};
    if (!tc.interior_knots.empty()) t["time_basis"]["interior_knots"] = tc.interior_knots;
    t["interactions"] = json::array();
    for (const auto& it : tc.interactions)
      t["interactions"].push_back({{"covariate", it.w_index}, {"columns", it.cols}});
    t["random_basis"] = {{"family", tc.random_family},
                         {"degree", tc.random_degree},
                         {"size", tc.random_size}};
    if (!tc.random_interior_knots.empty())
      t["random_basis"]["interior_knots"] = tc.random_interior_knots;
    j["longitudinal"].push_back(t);
  }
  return j.dump(2);
}

ModelSpecConfig model_spec_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelSpecConfig cfg;
  if (j.contains("baseline")) {
    const auto& b = j["baseline"];
    cfg.baseline_family = b.value("family", cfg.baseline_family);
    cfg.baseline_order = b.value("order", cfg.baseline_order);
    cfg.baseline_m = b.value("m", 0);
    if (b.contains("knots")) cfg.baseline_knots = b["knots"].get<std::vector<double>>();
  }
  if (j.contains("longitudinal")) {
    for (const auto& t : j["longitudinal"]) {
      TrajConfig tc;
      if (t.contains("time_basis")) {
        const auto& tb = t["time_basis"];
        tc.family = tb.value("family", tc.family);
        tc.degree = tb.value("degree", tc.degree);
        tc.size = tb.value("size", tc.size);
        if (tb.contains("interior_knots"))
          tc.interior_knots = tb["interior_knots"].get<std::vector<double>>();
      }
      if (t.contains("interactions")) {
        for (const auto& it : t["interactions"]) {
          TrajInteraction ti;
          ti.w_index = it.value("covariate", 0);
          ti.cols = it.value("columns", 1);
          tc.interactions.push_back(ti);
        }
      }
      if (t.contains("random_basis")) {
        const auto& rb = t["random_basis"];
        tc.random_family = rb.value("family", tc.random_family);
        tc.random_degree = rb.value("degree", tc.random_degree);
        tc.random_size = rb.value("size", tc.random_size);
        if (rb.contains("interior_knots"))
          tc.random_interior_knots = rb["interior_knots"].get<std::vector<double>>();
      }
      cfg.longitudinal.push_back(std::move(tc));
    }
  }
  return cfg;
}

}  // namespace icjm
