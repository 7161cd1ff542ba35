#include <cmath>

#include "icjm/deriv.hpp"

namespace icjm {

namespace {

double rel_err(double a, double f, double abs_floor = 1e-8) {
  const double diff = std::abs(a - f);
  if (diff < abs_floor) return 0.0;
  return diff / std::max({std::abs(a), std::abs(f), abs_floor});
}

Vec fd_gradient(const FitWorkspace& ws, const ParameterState& s,
                const VarianceComponents& var) {
  const ModelSpec& spec = ws.spec();
  const int n = ws.n();
  Vec eta = s.flatten(spec);
  Vec g(eta.size());
  ParameterState pert = s;
  for (int j = 0; j < eta.size(); ++j) {
    const double h = 1e-6 * (1.0 + std::abs(eta[j]));
    Vec e = eta;
    e[j] = eta[j] + h;
    pert.unflatten(spec, e);
    const double up = penalised_objective(ws, pert, var);
    e[j] = eta[j] - h;
    pert.unflatten(spec, e);
    const double dn = penalised_objective(ws, pert, var);
    g[j] = (up - dn) / (2.0 * h);
  }
  (void)n;
  return g;
}

}  // namespace

DerivCheckReport check_score(const FitWorkspace& ws, const ParameterState& s,
                             const VarianceComponents& var, double tol) {
  const ModelSpec& spec = ws.spec();
  const Vec analytic = score(ws, s, var).flatten(spec);
  const Vec fd = fd_gradient(ws, s, var);

  DerivCheckReport rep;
  auto block_row = [&](const std::string& name, int off, int len) {
    DerivCheckRow row;
    row.block = name;
    for (int j = 0; j < len; ++j)
      row.max_err = std::max(row.max_err, rel_err(analytic[off + j], fd[off + j]));
    row.pass = row.max_err < tol;
    rep.rows.push_back(row);
    rep.pass = rep.pass && row.pass;
  };
  if (spec.p > 0) block_row("beta", 0, spec.p);
  if (spec.q > 0) block_row("gamma", spec.off_gamma(), spec.q);
  block_row("theta", spec.off_theta(), spec.m());
  if (spec.b_total() > 0) block_row("alpha", spec.off_alpha(0), spec.b_total());
  if (spec.c_total() > 0)
    block_row("kappa", spec.zeta_dim(), ws.n() * spec.c_total());
  return rep;
}

DerivCheckReport check_hessian(const FitWorkspace& ws, const ParameterState& s,
                               const VarianceComponents& var, double tol) {
  const ModelSpec& spec = ws.spec();
  const Mat analytic = -negative_hessian(ws, s, var).dense();  // Hessian of Phi
  const Vec eta = s.flatten(spec);
  const int d = static_cast<int>(eta.size());
  Mat fd(d, d);
  ParameterState pert = s;
  for (int j = 0; j < d; ++j) {
    // wider step than the score check: differences of scores amplify roundoff
    const double h = 1e-4 * (1.0 + std::abs(eta[j]));
    Vec e = eta;
    e[j] = eta[j] + h;
    pert.unflatten(spec, e);
    const Vec up = score(ws, pert, var).flatten(spec);
    e[j] = eta[j] - h;
    pert.unflatten(spec, e);
    const Vec dn = score(ws, pert, var).flatten(spec);
    fd.col(j) = (up - dn) / (2.0 * h);
  }

  DerivCheckReport rep;
  struct Block {
    std::string name;
    int off, len;
  };
  std::vector<Block> blocks;
  if (spec.p > 0) blocks.push_back({"beta", 0, spec.p});
  if (spec.q > 0) blocks.push_back({"gamma", spec.off_gamma(), spec.q});
  blocks.push_back({"theta", spec.off_theta(), spec.m()});
  if (spec.b_total() > 0) blocks.push_back({"alpha", spec.off_alpha(0), spec.b_total()});
  if (spec.c_total() > 0) blocks.push_back({"kappa", spec.zeta_dim(), ws.n() * spec.c_total()});
  for (const auto& bi : blocks) {
    for (const auto& bj : blocks) {
      DerivCheckRow row;
      row.block = bi.name + "-" + bj.name;
      for (int a = 0; a < bi.len; ++a)
        for (int b = 0; b < bj.len; ++b)
          row.max_err = std::max(
              row.max_err, rel_err(analytic(bi.off + a, bj.off + b),
                                   fd(bi.off + a, bj.off + b), 1e-7));
      row.pass = row.max_err < tol;
      rep.rows.push_back(row);
      rep.pass = rep.pass && row.pass;
    }
  }
  return rep;
}

}  // namespace icjm
