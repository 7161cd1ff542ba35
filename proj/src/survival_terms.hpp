#pragma once

// Internal helpers shared by the likelihood and derivative translation units.
// Each censoring branch of l_i is a function of the cumulative hazards at the
// interval endpoints; gradients and Hessians follow the chain rule through
// dH and d2H with the scalar weights below.

#include <cmath>
#include <limits>

#include "icjm/data.hpp"

namespace icjm::detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// l_i value for the censoring branches that depend only on H
inline double branch_loglik(CensoringStatus st, double h_lo, double h_hi) {
  switch (st) {
    case CensoringStatus::Exact:
    case CensoringStatus::Right:
      return -h_hi;  // exact adds ln h0 + x'b + z'g separately
    case CensoringStatus::Left: {
      if (h_hi <= 0.0) return kNegInf;
      return std::log(-std::expm1(-h_hi));
    }
    case CensoringStatus::Interval: {
      const double dh = h_hi - h_lo;
      if (dh <= 0.0) return kNegInf;
      return -h_lo + std::log(-std::expm1(-dh));
    }
  }
  return kNegInf;
}

struct BranchWeights {
  // gradient: g_lo * dH_lo + g_hi * dH_hi
  double g_lo = 0.0, g_hi = 0.0;
  // Hessian: m_lo * d2H_lo + m_hi * d2H_hi
  //        + h_ll dH_lo dH_lo' + h_hh dH_hi dH_hi' + h_lh (dH_lo dH_hi' + sym)
  double m_lo = 0.0, m_hi = 0.0;
  double h_ll = 0.0, h_hh = 0.0, h_lh = 0.0;
};

inline BranchWeights branch_weights(CensoringStatus st, double h_lo, double h_hi) {
  BranchWeights w;
  switch (st) {
    case CensoringStatus::Exact:
    case CensoringStatus::Right:
      w.g_hi = -1.0;
      w.m_hi = -1.0;
      break;
    case CensoringStatus::Left: {
      // S/(1-S) = 1/expm1(H)
      const double sf = 1.0 / std::expm1(h_hi);
      w.g_hi = sf;
      w.m_hi = sf;
      w.h_hh = -sf * (1.0 + sf);
      break;
    }
    case CensoringStatus::Interval: {
      const double dh = h_hi - h_lo;
      // w_R = S_R/(S_L - S_R), w_L = 1 + w_R
      const double wr = 1.0 / std::expm1(dh);
      const double wl = 1.0 + wr;
      w.g_lo = -wl;
      w.g_hi = wr;
      w.m_lo = -wl;
      w.m_hi = wr;
      const double prod = wl * wr;
      w.h_ll = -prod;
      w.h_hh = -prod;
      w.h_lh = prod;
      break;
    }
  }
  return w;
}

}  // namespace icjm::detail
