#pragma once

// Minimal independent reimplementation of the two-block beta/theta MPL loop
// for partly-interval-censored Cox data (no longitudinal block, gamma = 0).
// Written against its own derivation of the four likelihood branches with
// I-spline cumulative hazards; used as the survival-only oracle.

#include <cmath>
#include <limits>
#include <vector>

#include "icjm/basis.hpp"
#include "icjm/data.hpp"
#include "icjm/rng.hpp"

namespace icjm::testutil {

struct CoxOracleFit {
  Vec beta;
  Vec theta;
  bool converged = false;
  double loglik = 0.0;
};

class CoxOracle {
 public:
  CoxOracle(const Dataset& ds, const BasisSet& basis) : ds_(&ds), basis_(&basis) {
    const int n = ds.n();
    for (int i = 0; i < n; ++i) {
      const Subject& s = ds.subjects[i];
      psi_lo_.push_back(basis.eval_integral(s.status == CensoringStatus::Interval
                                                ? s.t_left
                                                : s.obs_time()));
      psi_hi_.push_back(basis.eval_integral(s.obs_time()));
      psi_at_.push_back(s.status == CensoringStatus::Exact ? basis.eval(s.t_left)
                                                           : Vec::Zero(basis.size()));
    }
  }

  double loglik(const Vec& beta, const Vec& theta) const {
    double ll = 0.0;
    for (int i = 0; i < ds_->n(); ++i) {
      const Subject& s = ds_->subjects[i];
      const double exb = std::exp(s.x.dot(beta));
      const double h_hi = exb * theta.dot(psi_hi_[i]);
      switch (s.status) {
        case CensoringStatus::Exact: {
          const double h0 = theta.dot(psi_at_[i]);
          if (h0 <= 0.0) return -std::numeric_limits<double>::infinity();
          ll += std::log(h0) + s.x.dot(beta) - h_hi;
          break;
        }
        case CensoringStatus::Right:
          ll -= h_hi;
          break;
        case CensoringStatus::Left:
          if (h_hi <= 0.0) return -std::numeric_limits<double>::infinity();
          ll += std::log(-std::expm1(-h_hi));
          break;
        case CensoringStatus::Interval: {
          const double h_lo = exb * theta.dot(psi_lo_[i]);
          if (h_hi <= h_lo) return -std::numeric_limits<double>::infinity();
          ll += -h_lo + std::log(-std::expm1(-(h_hi - h_lo)));
          break;
        }
      }
    }
    return ll;
  }

  CoxOracleFit fit(double tol = 1e-9, int max_iter = 20000) const {
    const int p = ds_->p, m = basis_->size();
    CoxOracleFit out;
    out.beta = Vec::Zero(p);
    out.theta = Vec::Constant(m, 0.1);
    double ll = loglik(out.beta, out.theta);

    for (int it = 0; it < max_iter; ++it) {
      const Vec beta_prev = out.beta;
      const Vec theta_prev = out.theta;

      // beta Newton step with its own branch weights
      Vec g = Vec::Zero(p);
      Mat h = Mat::Zero(p, p);
      for (int i = 0; i < ds_->n(); ++i) {
        const Subject& s = ds_->subjects[i];
        const double exb = std::exp(s.x.dot(out.beta));
        const double h_hi = exb * out.theta.dot(psi_hi_[i]);
        const double h_lo = exb * out.theta.dot(psi_lo_[i]);
        double gw = 0.0, cw = 0.0;
        switch (s.status) {
          case CensoringStatus::Exact:
            gw = 1.0 - h_hi;
            cw = h_hi;
            break;
          case CensoringStatus::Right:
            gw = -h_hi;
            cw = h_hi;
            break;
          case CensoringStatus::Left: {
            const double sf = 1.0 / std::expm1(h_hi);
            gw = sf * h_hi;
            cw = -sf * h_hi + sf * (1.0 + sf) * h_hi * h_hi;
            break;
          }
          case CensoringStatus::Interval: {
            const double wr = 1.0 / std::expm1(h_hi - h_lo);
            const double wl = 1.0 + wr;
            gw = -wl * h_lo + wr * h_hi;
            const double dh = h_hi - h_lo;
            cw = wl * h_lo - wr * h_hi + wl * wr * dh * dh;
            break;
          }
        }
        g += gw * s.x;
        h += std::max(cw, 1e-12) * (s.x * s.x.transpose());
      }
      Vec step = h.ldlt().solve(g);
      double scale = 1.0;
      for (int k = 0; k < 40; ++k) {
        const Vec cand = out.beta + scale * step;
        const double cand_ll = loglik(cand, out.theta);
        if (std::isfinite(cand_ll) && cand_ll >= ll - 1e-12) {
          out.beta = cand;
          ll = cand_ll;
          break;
        }
        scale *= 0.5;
      }

      // theta multiplicative update from term-collected positive/negative parts
      Vec pos = Vec::Zero(m), neg = Vec::Zero(m);
      for (int i = 0; i < ds_->n(); ++i) {
        const Subject& s = ds_->subjects[i];
        const double exb = std::exp(s.x.dot(out.beta));
        const double h_hi = exb * out.theta.dot(psi_hi_[i]);
        const double h_lo = exb * out.theta.dot(psi_lo_[i]);
        switch (s.status) {
          case CensoringStatus::Exact: {
            const double h0 = std::max(out.theta.dot(psi_at_[i]), 1e-300);
            pos += psi_at_[i] / h0;
            neg += exb * psi_hi_[i];
            break;
          }
          case CensoringStatus::Right:
            neg += exb * psi_hi_[i];
            break;
          case CensoringStatus::Left: {
            const double sf = 1.0 / std::expm1(h_hi);
            pos += sf * exb * psi_hi_[i];
            break;
          }
          case CensoringStatus::Interval: {
            const double wr = 1.0 / std::expm1(h_hi - h_lo);
            const double wl = 1.0 + wr;
            pos += wr * exb * psi_hi_[i];
            neg += wl * exb * psi_lo_[i];
            break;
          }
        }
      }
      Vec ratio(m);
      for (int u = 0; u < m; ++u) ratio[u] = (pos[u] + 1e-12) / (neg[u] + 1e-12);
      double expo = 1.0;
      for (int k = 0; k < 40; ++k) {
        Vec cand(m);
        for (int u = 0; u < m; ++u) cand[u] = out.theta[u] * std::pow(ratio[u], expo);
        const double cand_ll = loglik(out.beta, cand);
        if (std::isfinite(cand_ll) && cand_ll >= ll - 1e-12) {
          out.theta = cand;
          ll = cand_ll;
          break;
        }
        expo *= 0.5;
      }

      const double diff = std::max((out.beta - beta_prev).cwiseAbs().maxCoeff(),
                                   (out.theta - theta_prev).cwiseAbs().maxCoeff());
      if (diff < tol) {
        out.converged = true;
        break;
      }
    }
    out.loglik = ll;
    return out;
  }

 private:
  const Dataset* ds_;
  const BasisSet* basis_;
  std::vector<Vec> psi_lo_, psi_hi_, psi_at_;
};

// mixed-censoring survival-only data with one binary covariate
inline Dataset survival_only_dataset(int n, std::uint64_t seed) {
  Dataset ds;
  ds.p = 1;
  ds.q = 0;
  ds.pz = 0;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Subject s;
    s.id = std::to_string(i + 1);
    s.x = Vec::Constant(1, rng.bernoulli(0.5) ? 1.0 : 0.0);
    // Weibull-ish times thinned by the covariate
    const double u = rng.uniform();
    const double y = std::cbrt(-std::log(1.0 - u) / std::exp(-0.5 * s.x[0]));
    const double c = rng.uniform(0.3, 1.6);
    const double pick = rng.uniform();
    if (pick < 0.5) {
      if (y <= c) {
        s.t_left = s.t_right = y;
      } else {
        s.t_left = c;
        s.t_right = std::numeric_limits<double>::infinity();
      }
    } else if (pick < 0.65) {
      const double edge = rng.uniform(0.2, 0.9);
      if (y < edge) {
        s.t_left = 0.0;
        s.t_right = edge;
      } else {
        s.t_left = edge;
        s.t_right = std::numeric_limits<double>::infinity();
      }
    } else {
      const double lo = rng.uniform(0.1, 0.8);
      const double hi = lo + rng.uniform(0.1, 0.7);
      if (y < lo) {
        s.t_left = 0.0;
        s.t_right = lo;
      } else if (y > hi) {
        s.t_left = hi;
        s.t_right = std::numeric_limits<double>::infinity();
      } else {
        s.t_left = lo;
        s.t_right = hi;
      }
    }
    s.status = classify_interval(s.t_left, s.t_right);
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

}  // namespace icjm::testutil
