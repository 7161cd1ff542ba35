#include "icjm/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace icjm {

std::string to_string(BasisFamily f) {
  switch (f) {
    case BasisFamily::MSpline: return "mspline";
    case BasisFamily::BSpline: return "bspline";
    case BasisFamily::Polynomial: return "polynomial";
    case BasisFamily::Indicator: return "indicator";
  }
  return "?";
}

BasisFamily basis_family_from_string(const std::string& s) {
  if (s == "mspline") return BasisFamily::MSpline;
  if (s == "bspline") return BasisFamily::BSpline;
  if (s == "polynomial") return BasisFamily::Polynomial;
  if (s == "indicator") return BasisFamily::Indicator;
  throw std::invalid_argument("unknown basis family: " + s);
}

QuadratureRule quadrature(double a, double b, int n) {
  if (!(a < b)) throw std::domain_error("quadrature: requires a < b");
  if (n < 1) throw std::domain_error("quadrature: requires n >= 1");
  // Golub-Welsch would also do; Newton on P_n is enough and dependency-free.
  std::vector<double> x(n), w(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    double wi = 2.0 / ((1.0 - z * z) * pp * pp);
    w[i] = wi;
    w[n - 1 - i] = wi;
  }
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mid = 0.5 * (a + b), hw = 0.5 * (b - a);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = mid + hw * x[i];
    rule.weights[i] = hw * w[i];
  }
  return rule;
}

namespace {

using Poly = std::vector<double>;  // coefficients of x^j, local coordinates

Poly poly_scale(const Poly& p, double c) {
  Poly r(p);
  for (double& v : r) v *= c;
  return r;
}

void poly_add_inplace(Poly& p, const Poly& q) {
  if (q.size() > p.size()) p.resize(q.size(), 0.0);
  for (size_t j = 0; j < q.size(); ++j) p[j] += q[j];
}

// (a + s*x) * p
Poly poly_mul_linear(const Poly& p, double a, double s) {
  Poly r(p.size() + 1, 0.0);
  for (size_t j = 0; j < p.size(); ++j) {
    r[j] += a * p[j];
    r[j + 1] += s * p[j];
  }
  return r;
}

double poly_eval(const Poly& p, double x) {
  double v = 0.0;
  for (size_t j = p.size(); j-- > 0;) v = v * x + p[j];
  return v;
}

Poly poly_deriv(const Poly& p, int d) {
  Poly r(p);
  for (int k = 0; k < d; ++k) {
    if (r.size() <= 1) return Poly{0.0};
    Poly q(r.size() - 1);
    for (size_t j = 1; j < r.size(); ++j) q[j - 1] = r[j] * static_cast<double>(j);
    r = std::move(q);
  }
  return r;
}

double poly_integral(const Poly& p, double x) {
  // int_0^x p
  double v = 0.0;
  for (size_t j = p.size(); j-- > 0;) v = v * x + p[j] / (j + 1.0);
  return v * x;
}

double poly_product_integral(const Poly& p, const Poly& q, double len) {
  Poly prod(p.size() + q.size() - 1, 0.0);
  for (size_t i = 0; i < p.size(); ++i)
    for (size_t j = 0; j < q.size(); ++j) prod[i + j] += p[i] * q[j];
  return poly_integral(prod, len);
}

std::vector<double> distinct_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

int BasisSet::segment_of(double t) const {
  // right-continuous; t == upper() maps onto the last segment
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  int s = static_cast<int>(it - knots_.begin()) - 1;
  const int last = static_cast<int>(knots_.size()) - 2;
  if (s > last) s = last;
  if (s < 0) s = 0;
  return s;
}

void BasisSet::eval_local(double t, int d, double* out) const {
  if (!std::isfinite(t)) throw std::domain_error("basis eval: t not finite");
  if (t < knots_.front() - 1e-12 * (1.0 + std::abs(knots_.front())))
    throw std::domain_error("basis eval: t below first boundary knot");
  if (t > knots_.back()) {
    std::fill(out, out + size_, 0.0);
    return;
  }
  const int s = segment_of(t);
  const double x = t - knots_[s];
  for (int f = 0; f < size_; ++f) {
    const auto& seg = coef_[f][s];
    if (seg.empty()) {
      out[f] = 0.0;
    } else if (d == 0) {
      out[f] = poly_eval(seg, x);
    } else {
      out[f] = poly_eval(poly_deriv(seg, d), x);
    }
  }
}

Vec BasisSet::eval(double t) const {
  Vec v(size_);
  eval_local(t, 0, v.data());
  return v;
}

Vec BasisSet::eval_deriv(double t, int d) const {
  Vec v(size_);
  eval_local(t, d, v.data());
  return v;
}

Vec BasisSet::eval_integral(double t) const {
  if (!std::isfinite(t)) throw std::domain_error("basis integral: t not finite");
  Vec v = Vec::Zero(size_);
  if (t <= knots_.front()) return v;
  const bool beyond = t >= knots_.back();
  const int s = beyond ? static_cast<int>(knots_.size()) - 2 : segment_of(t);
  const double x = beyond ? knots_[s + 1] - knots_[s] : t - knots_[s];
  for (int f = 0; f < size_; ++f) {
    double acc = cum_int_[f][s];
    const auto& seg = coef_[f][s];
    if (!seg.empty()) acc += poly_integral(seg, x);
    v[f] = acc;
  }
  return v;
}

PenaltyMatrix BasisSet::penalty_matrix() const {
  PenaltyMatrix pm;
  pm.entries = Mat::Zero(size_, size_);
  const int degree = order_ - 1;
  if (family_ == BasisFamily::Indicator || degree < 2) {
    pm.zero_penalty = true;
    return pm;
  }
  const int S = static_cast<int>(knots_.size()) - 1;
  for (int u = 0; u < size_; ++u) {
    for (int v = u; v < size_; ++v) {
      double acc = 0.0;
      for (int s = 0; s < S; ++s) {
        const auto& pu = coef_[u][s];
        const auto& pv = coef_[v][s];
        if (pu.empty() || pv.empty()) continue;
        acc += poly_product_integral(poly_deriv(pu, 2), poly_deriv(pv, 2),
                                     knots_[s + 1] - knots_[s]);
      }
      pm.entries(u, v) = acc;
      pm.entries(v, u) = acc;
    }
  }
  return pm;
}

namespace {

// Shared spline constructor. `extended` carries boundary repeats; segments are
// the distinct intervals. Per order o, func[u] holds local polynomials per
// segment (empty == identically zero there).
struct SplineBuild {
  std::vector<double> extended;
  std::vector<double> breaks;
  std::vector<int> seg_of_interval;  // extended interval u -> segment index or -1
  int n_seg = 0;

  void init(const std::vector<double>& ext) {
    extended = ext;
    breaks = distinct_sorted(ext);
    n_seg = static_cast<int>(breaks.size()) - 1;
    seg_of_interval.assign(extended.size() > 0 ? extended.size() - 1 : 0, -1);
    for (size_t u = 0; u + 1 < extended.size(); ++u) {
      if (extended[u + 1] > extended[u]) {
        auto it = std::lower_bound(breaks.begin(), breaks.end(), extended[u]);
        seg_of_interval[u] = static_cast<int>(it - breaks.begin());
      }
    }
  }
};

using FuncPieces = std::vector<Poly>;  // per segment

}  // namespace

BasisSet BasisSet::mspline(std::vector<double> knots, int order) {
  if (order < 1) throw std::invalid_argument("mspline: order >= 1 required");
  knots = distinct_sorted(knots);
  if (knots.size() < 2) throw std::invalid_argument("mspline: need >= 2 distinct knots");
  std::vector<double> ext;
  for (int i = 0; i < order; ++i) ext.push_back(knots.front());
  for (size_t i = 1; i + 1 < knots.size(); ++i) ext.push_back(knots[i]);
  for (int i = 0; i < order; ++i) ext.push_back(knots.back());

  SplineBuild sb;
  sb.init(ext);
  const int n_intervals = static_cast<int>(ext.size()) - 1;

  // order 1
  std::vector<FuncPieces> cur(n_intervals, FuncPieces(sb.n_seg));
  for (int u = 0; u < n_intervals; ++u) {
    const int s = sb.seg_of_interval[u];
    if (s >= 0) cur[u][s] = Poly{1.0 / (ext[u + 1] - ext[u])};
  }
  for (int o = 2; o <= order; ++o) {
    const int nf = static_cast<int>(ext.size()) - o;
    std::vector<FuncPieces> nxt(nf, FuncPieces(sb.n_seg));
    for (int u = 0; u < nf; ++u) {
      const double denom = ext[u + o] - ext[u];
      if (denom <= 0) continue;
      const double c = static_cast<double>(o) / ((o - 1.0) * denom);
      for (int s = 0; s < sb.n_seg; ++s) {
        Poly acc;
        if (!cur[u][s].empty())
          acc = poly_scale(poly_mul_linear(cur[u][s], sb.breaks[s] - ext[u], 1.0), c);
        if (!cur[u + 1][s].empty()) {
          Poly t2 = poly_scale(poly_mul_linear(cur[u + 1][s], ext[u + o] - sb.breaks[s], -1.0), c);
          if (acc.empty()) acc = std::move(t2);
          else poly_add_inplace(acc, t2);
        }
        nxt[u][s] = std::move(acc);
      }
    }
    cur = std::move(nxt);
  }

  BasisSet b;
  b.family_ = BasisFamily::MSpline;
  b.order_ = order;
  b.knots_ = sb.breaks;
  b.size_ = static_cast<int>(cur.size());
  b.coef_.resize(b.size_);
  for (int f = 0; f < b.size_; ++f) {
    b.coef_[f].resize(sb.n_seg);
    for (int s = 0; s < sb.n_seg; ++s) b.coef_[f][s] = cur[f][s];
  }
  b.cum_int_.assign(b.size_, std::vector<double>(sb.n_seg, 0.0));
  for (int f = 0; f < b.size_; ++f)
    for (int s = 1; s < sb.n_seg; ++s) {
      double prev = b.cum_int_[f][s - 1];
      const auto& seg = b.coef_[f][s - 1];
      if (!seg.empty()) prev += poly_integral(seg, sb.breaks[s] - sb.breaks[s - 1]);
      b.cum_int_[f][s] = prev;
    }
  return b;
}

BasisSet BasisSet::bspline(std::vector<double> knots, int order) {
  if (order < 1) throw std::invalid_argument("bspline: order >= 1 required");
  knots = distinct_sorted(knots);
  if (knots.size() < 2) throw std::invalid_argument("bspline: need >= 2 distinct knots");
  std::vector<double> ext;
  for (int i = 0; i < order; ++i) ext.push_back(knots.front());
  for (size_t i = 1; i + 1 < knots.size(); ++i) ext.push_back(knots[i]);
  for (int i = 0; i < order; ++i) ext.push_back(knots.back());

  SplineBuild sb;
  sb.init(ext);
  const int n_intervals = static_cast<int>(ext.size()) - 1;

  std::vector<FuncPieces> cur(n_intervals, FuncPieces(sb.n_seg));
  for (int u = 0; u < n_intervals; ++u) {
    const int s = sb.seg_of_interval[u];
    if (s >= 0) cur[u][s] = Poly{1.0};
  }
  for (int o = 2; o <= order; ++o) {
    const int nf = static_cast<int>(ext.size()) - o;
    std::vector<FuncPieces> nxt(nf, FuncPieces(sb.n_seg));
    for (int u = 0; u < nf; ++u) {
      const double d1 = ext[u + o - 1] - ext[u];
      const double d2 = ext[u + o] - ext[u + 1];
      for (int s = 0; s < sb.n_seg; ++s) {
        Poly acc;
        if (d1 > 0 && !cur[u][s].empty())
          acc = poly_scale(poly_mul_linear(cur[u][s], sb.breaks[s] - ext[u], 1.0), 1.0 / d1);
        if (d2 > 0 && !cur[u + 1][s].empty()) {
          Poly t2 = poly_scale(poly_mul_linear(cur[u + 1][s], ext[u + o] - sb.breaks[s], -1.0), 1.0 / d2);
          if (acc.empty()) acc = std::move(t2);
          else poly_add_inplace(acc, t2);
        }
        nxt[u][s] = std::move(acc);
      }
    }
    cur = std::move(nxt);
  }

  BasisSet b;
  b.family_ = BasisFamily::BSpline;
  b.order_ = order;
  b.knots_ = sb.breaks;
  b.size_ = static_cast<int>(cur.size());
  b.coef_.resize(b.size_);
  for (int f = 0; f < b.size_; ++f) {
    b.coef_[f].resize(sb.n_seg);
    for (int s = 0; s < sb.n_seg; ++s) b.coef_[f][s] = cur[f][s];
  }
  b.cum_int_.assign(b.size_, std::vector<double>(sb.n_seg, 0.0));
  for (int f = 0; f < b.size_; ++f)
    for (int s = 1; s < sb.n_seg; ++s) {
      double prev = b.cum_int_[f][s - 1];
      const auto& seg = b.coef_[f][s - 1];
      if (!seg.empty()) prev += poly_integral(seg, sb.breaks[s] - sb.breaks[s - 1]);
      b.cum_int_[f][s] = prev;
    }
  return b;
}

BasisSet BasisSet::polynomial(int degree, double lo, double hi) {
  if (degree < 0) throw std::invalid_argument("polynomial: degree >= 0 required");
  if (!(lo < hi)) throw std::invalid_argument("polynomial: lo < hi required");
  BasisSet b;
  b.family_ = BasisFamily::Polynomial;
  b.order_ = degree + 1;
  b.knots_ = {lo, hi};
  b.size_ = degree + 1;
  b.coef_.resize(b.size_);
  // raw monomial t^j, shifted to local coordinates x = t - lo
  for (int j = 0; j <= degree; ++j) {
    Poly p(j + 1, 0.0);
    double binom = 1.0;
    for (int i = 0; i <= j; ++i) {
      p[i] = binom * std::pow(lo, j - i);
      binom = binom * (j - i) / (i + 1.0);
    }
    b.coef_[j] = {p};
  }
  b.cum_int_.assign(b.size_, std::vector<double>(1, 0.0));
  return b;
}

BasisSet BasisSet::indicator(std::vector<double> cell_edges) {
  cell_edges = distinct_sorted(cell_edges);
  if (cell_edges.size() < 2) throw std::invalid_argument("indicator: need >= 2 edges");
  BasisSet b;
  b.family_ = BasisFamily::Indicator;
  b.order_ = 1;
  b.knots_ = cell_edges;
  const int S = static_cast<int>(cell_edges.size()) - 1;
  b.size_ = S;
  b.coef_.resize(S);
  for (int f = 0; f < S; ++f) {
    b.coef_[f].resize(S);
    b.coef_[f][f] = Poly{1.0};
  }
  b.cum_int_.assign(S, std::vector<double>(S, 0.0));
  for (int f = 0; f < S; ++f)
    for (int s = 1; s < S; ++s)
      b.cum_int_[f][s] = b.cum_int_[f][s - 1] +
          (s - 1 == f ? cell_edges[s] - cell_edges[s - 1] : 0.0);
  return b;
}

int default_basis_size(int n0, int order) {
  int m = static_cast<int>(std::lround(std::cbrt(static_cast<double>(std::max(n0, 1)))));
  return std::clamp(m, order, 20);
}

BasisSet default_knots(const std::vector<double>& times, int m, int order,
                       BasisFamily family, bool* jittered) {
  if (times.empty()) throw std::invalid_argument("default_knots: no times supplied");
  std::vector<double> ts(times);
  std::sort(ts.begin(), ts.end());
  const double lo = ts.front(), hi = ts.back();
  if (!(lo < hi)) throw std::invalid_argument("default_knots: degenerate time range");
  int n_interior;
  switch (family) {
    case BasisFamily::Indicator: n_interior = m - 1; break;
    case BasisFamily::Polynomial: n_interior = 0; break;
    default: n_interior = m - order;
  }
  if (n_interior < 0) throw std::invalid_argument("default_knots: m smaller than order");
  std::vector<double> knots{lo};
  const auto quantile = [&](double p) {
    const double pos = p * (ts.size() - 1);
    const size_t i = static_cast<size_t>(pos);
    if (i + 1 >= ts.size()) return ts.back();
    return ts[i] + (pos - i) * (ts[i + 1] - ts[i]);
  };
  for (int j = 1; j <= n_interior; ++j)
    knots.push_back(quantile(static_cast<double>(j) / (n_interior + 1)));
  knots.push_back(hi);

  bool any_jitter = false;
  const double scale = (hi - lo) * 64.0 * std::numeric_limits<double>::epsilon();
  for (size_t j = 1; j < knots.size(); ++j) {
    if (knots[j] <= knots[j - 1]) {
      knots[j] = knots[j - 1] + scale * static_cast<double>(j);
      any_jitter = true;
    }
  }
  if (knots.back() > hi) {
    // jitter pushed past the boundary; squeeze interior back below hi
    for (size_t j = knots.size() - 1; j-- > 1;)
      if (knots[j] >= knots[j + 1]) knots[j] = knots[j + 1] - scale;
    knots.back() = std::max(hi, knots[knots.size() - 2] + scale);
  }
  if (jittered) *jittered = any_jitter;

  switch (family) {
    case BasisFamily::MSpline: return BasisSet::mspline(knots, order);
    case BasisFamily::BSpline: return BasisSet::bspline(knots, order);
    case BasisFamily::Indicator: return BasisSet::indicator(knots);
    case BasisFamily::Polynomial: return BasisSet::polynomial(m - 1, lo, hi);
  }
  throw std::logic_error("default_knots: unreachable");
}

}  // namespace icjm
