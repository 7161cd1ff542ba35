#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "icjm/basis.hpp"
#include "icjm/rng.hpp"

using namespace icjm;

namespace {

// Exact-rational de Boor style recursion for M-splines, independent of the
// piecewise-polynomial construction in the library.
struct Frac {
  long long num = 0, den = 1;
  void reduce() {
    if (den < 0) { num = -num; den = -den; }
    long long a = std::abs(num), b = den;
    while (b) { const long long t = a % b; a = b; b = t; }
    if (a > 1) { num /= a; den /= a; }
  }
};

Frac frac(long long n, long long d = 1) {
  Frac f{n, d};
  f.reduce();
  return f;
}
Frac operator+(Frac a, Frac b) { return frac(a.num * b.den + b.num * a.den, a.den * b.den); }
Frac operator-(Frac a, Frac b) { return frac(a.num * b.den - b.num * a.den, a.den * b.den); }
Frac operator*(Frac a, Frac b) { return frac(a.num * b.num, a.den * b.den); }
Frac operator/(Frac a, Frac b) { return frac(a.num * b.den, a.den * b.num); }
double value(Frac f) { return static_cast<double>(f.num) / static_cast<double>(f.den); }

// M_{u,k} on the extended integer knot sequence tau, evaluated at rational t
Frac mspline_rec(const std::vector<Frac>& tau, size_t u, int k, Frac t) {
  if (k == 1) {
    const Frac w = tau[u + 1] - tau[u];
    if (w.num == 0) return frac(0);
    const bool in = (t.num * tau[u].den >= tau[u].num * t.den) &&
                    (t.num * tau[u + 1].den < tau[u + 1].num * t.den);
    return in ? frac(1) / w : frac(0);
  }
  const Frac span = tau[u + k] - tau[u];
  if (span.num == 0) return frac(0);
  const Frac a = (t - tau[u]) * mspline_rec(tau, u, k - 1, t);
  const Frac b = (tau[u + k] - t) * mspline_rec(tau, u + 1, k - 1, t);
  return frac(k) * (a + b) / (frac(k - 1) * span);
}

}  // namespace

TEST_CASE("indicator basis on unit cells") {
  const auto b = BasisSet::indicator({0.0, 1.0, 2.0});
  const Vec v = b.eval(0.5);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 0.0);
  const Vec w = b.eval(1.5);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == 1.0);
}

TEST_CASE("mspline values are non-negative with local support") {
  const auto b = BasisSet::mspline({0.0, 1.0, 2.0, 3.0, 4.0}, 4);
  Rng rng(7);
  for (int k = 0; k < 200; ++k) {
    const double t = rng.uniform(0.0, 4.0);
    const Vec v = b.eval(t);
    int nonzero = 0;
    for (int j = 0; j < v.size(); ++j) {
      CHECK(v[j] >= 0.0);
      if (v[j] != 0.0) ++nonzero;
    }
    CHECK(nonzero <= 4);
  }
}

TEST_CASE("cubic mspline matches the exact rational recursion oracle") {
  // knots {0,1,2,3}, order 4: tau = 0,0,0,0,1,2,3,3,3,3
  const auto b = BasisSet::mspline({0.0, 1.0, 2.0, 3.0}, 4);
  std::vector<Frac> tau;
  for (int i = 0; i < 4; ++i) tau.push_back(frac(0));
  tau.push_back(frac(1));
  tau.push_back(frac(2));
  for (int i = 0; i < 4; ++i) tau.push_back(frac(3));
  REQUIRE(b.size() == static_cast<int>(tau.size()) - 4);

  for (const auto& t : {frac(3, 2), frac(1, 4), frac(7, 3), frac(5, 2)}) {
    const Vec v = b.eval(value(t));
    for (int u = 0; u < b.size(); ++u) {
      const double oracle = value(mspline_rec(tau, u, 4, t));
      CHECK(v[u] == doctest::Approx(oracle).epsilon(1e-12));
    }
  }
}

TEST_CASE("basis integral endpoints and quadrature consistency") {
  const auto b = BasisSet::mspline({0.0, 0.7, 1.3, 2.0}, 3);
  SUBCASE("zero at the left boundary") {
    const Vec v = b.eval_integral(0.0);
    for (int j = 0; j < v.size(); ++j) CHECK(v[j] == 0.0);
  }
  SUBCASE("unit integrals at the right boundary") {
    const Vec v = b.eval_integral(2.0);
    for (int j = 0; j < v.size(); ++j) CHECK(v[j] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("midpoint value matches a high-order quadrature oracle") {
    const double t = 1.0;
    Vec acc = Vec::Zero(b.size());
    for (double edge : {0.0, 0.7}) {
      const double hi = std::min(t, edge == 0.0 ? 0.7 : 1.3);
      const auto rule = quadrature(edge, std::min(hi, t), 30);
      for (size_t j = 0; j < rule.nodes.size(); ++j)
        acc += rule.weights[j] * b.eval(rule.nodes[j]);
    }
    const Vec v = b.eval_integral(t);
    for (int j = 0; j < b.size(); ++j)
      CHECK(v[j] == doctest::Approx(acc[j]).epsilon(1e-10));
  }
  SUBCASE("integral differences match quadrature on random intervals") {
    Rng rng(11);
    for (int k = 0; k < 100; ++k) {
      double t1 = rng.uniform(0.0, 2.0), t2 = rng.uniform(0.0, 2.0);
      if (t1 > t2) std::swap(t1, t2);
      Vec acc = Vec::Zero(b.size());
      // integrate between knots so the polynomial rule is exact
      std::vector<double> brk{t1};
      for (double e : {0.7, 1.3})
        if (e > t1 && e < t2) brk.push_back(e);
      brk.push_back(t2);
      for (size_t s = 0; s + 1 < brk.size(); ++s) {
        if (brk[s + 1] <= brk[s]) continue;
        const auto rule = quadrature(brk[s], brk[s + 1], 12);
        for (size_t j = 0; j < rule.nodes.size(); ++j)
          acc += rule.weights[j] * b.eval(rule.nodes[j]);
      }
      const Vec diff = b.eval_integral(t2) - b.eval_integral(t1);
      for (int j = 0; j < b.size(); ++j)
        CHECK(diff[j] == doctest::Approx(acc[j]).epsilon(1e-9));
    }
  }
}

TEST_CASE("penalty matrix properties") {
  SUBCASE("linear polynomial basis has a zero penalty") {
    const auto b = BasisSet::polynomial(1, 0.0, 2.0);
    const auto pm = b.penalty_matrix();
    CHECK(pm.zero_penalty);
    CHECK(pm.entries.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("indicator family flags a zero penalty") {
    const auto pm = BasisSet::indicator({0.0, 1.0, 2.0}).penalty_matrix();
    CHECK(pm.zero_penalty);
  }
  SUBCASE("gram structure: symmetric positive semidefinite") {
    const auto b = BasisSet::mspline({0.0, 0.5, 1.1, 1.9, 3.0}, 4);
    const auto pm = b.penalty_matrix();
    CHECK((pm.entries - pm.entries.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
      Vec x(b.size());
      for (int j = 0; j < x.size(); ++j) x[j] = rng.normal();
      CHECK(x.dot(pm.entries * x) >= -1e-10 * pm.entries.cwiseAbs().maxCoeff());
    }
  }
  SUBCASE("cubic mspline entries match piecewise integration of linear second derivatives") {
    const auto b = BasisSet::mspline({0.0, 1.0, 2.0, 3.0}, 4);
    const auto pm = b.penalty_matrix();
    // second derivatives of cubic pieces are piecewise linear; integrate the
    // products with 2-point Gauss (exact for quadratics) using eval_deriv
    Mat oracle = Mat::Zero(b.size(), b.size());
    for (double lo : {0.0, 1.0, 2.0}) {
      const auto rule = quadrature(lo, lo + 1.0, 2);
      for (size_t j = 0; j < rule.nodes.size(); ++j) {
        const Vec d2 = b.eval_deriv(rule.nodes[j], 2);
        oracle += rule.weights[j] * (d2 * d2.transpose());
      }
    }
    CHECK((pm.entries - oracle).cwiseAbs().maxCoeff() <
          1e-9 * (1.0 + oracle.cwiseAbs().maxCoeff()));
  }
  SUBCASE("invariant under knot reversal up to index permutation") {
    const std::vector<double> knots{0.0, 0.4, 1.0, 2.3, 3.0};
    std::vector<double> mirrored;
    for (auto it = knots.rbegin(); it != knots.rend(); ++it)
      mirrored.push_back(knots.front() + knots.back() - *it);
    const auto a = BasisSet::mspline(knots, 4).penalty_matrix().entries;
    const auto c = BasisSet::mspline(mirrored, 4).penalty_matrix().entries;
    const int m = static_cast<int>(a.rows());
    for (int u = 0; u < m; ++u)
      for (int v = 0; v < m; ++v)
        CHECK(a(u, v) == doctest::Approx(c(m - 1 - u, m - 1 - v)).epsilon(1e-9));
  }
}

TEST_CASE("gauss-legendre quadrature") {
  SUBCASE("n=1 midpoint rule on [0,2]") {
    const auto rule = quadrature(0.0, 2.0, 1);
    CHECK(rule.nodes[0] == doctest::Approx(1.0));
    CHECK(rule.weights[0] == doctest::Approx(2.0));
  }
  SUBCASE("degree-3 exactness with 2 points") {
    const auto rule = quadrature(0.0, 1.0, 2);
    double acc = 0.0;
    for (size_t j = 0; j < rule.nodes.size(); ++j)
      acc += rule.weights[j] * std::pow(rule.nodes[j], 3);
    CHECK(acc == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("smooth integrand matches an adaptive oracle") {
    // int_0^1 3 s^2 exp(0.5 s) ds via recursive Simpson refinement
    const auto f = [](double s) { return 3.0 * s * s * std::exp(0.5 * s); };
    struct Adapt {
      double operator()(const std::function<double(double)>& g, double a, double b,
                        double fa, double fb, double fm, double tol, int depth) const {
        const double m = 0.5 * (a + b);
        const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
        const double flm = g(lm), frm = g(rm);
        const double s1 = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        const double s2 = (b - a) / 12.0 * (fa + 4.0 * flm + 2.0 * fm + 4.0 * frm + fb);
        if (depth > 40 || std::abs(s2 - s1) < tol) return s2 + (s2 - s1) / 15.0;
        return (*this)(g, a, m, fa, fm, flm, tol / 2, depth + 1) +
               (*this)(g, m, b, fm, fb, frm, tol / 2, depth + 1);
      }
    };
    const double oracle =
        Adapt{}(f, 0.0, 1.0, f(0.0), f(1.0), f(0.5), 1e-14, 0);
    const auto rule = quadrature(0.0, 1.0, 15);
    double acc = 0.0;
    for (size_t j = 0; j < rule.nodes.size(); ++j) acc += rule.weights[j] * f(rule.nodes[j]);
    CHECK(acc == doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("weights sum to the interval length") {
    for (int n : {1, 2, 5, 15, 31}) {
      const auto rule = quadrature(-1.5, 4.0, n);
      double s = 0.0;
      for (double w : rule.weights) {
        CHECK(w > 0.0);
        s += w;
      }
      CHECK(s == doctest::Approx(5.5).epsilon(1e-13));
    }
  }
  SUBCASE("invalid interval rejected") {
    CHECK_THROWS_AS(quadrature(1.0, 1.0, 3), std::domain_error);
  }
}

TEST_CASE("default knots") {
  SUBCASE("single interior knot at the median") {
    std::vector<double> times;
    for (int k = 1; k <= 100; ++k) times.push_back(k);
    // m = order + 1 interior knot
    const auto b = default_knots(times, 4, 3);
    REQUIRE(b.knots().size() == 3);
    CHECK(b.knots()[1] == doctest::Approx(50.5));
  }
  SUBCASE("default m follows the cube-root rule") {
    CHECK(default_basis_size(64, 3) == 4);
    CHECK(default_basis_size(1, 3) == 3);      // clamped to the order
    CHECK(default_basis_size(1000000, 3) == 20);  // clamped at 20
  }
  SUBCASE("degenerate times rejected") {
    CHECK_THROWS(default_knots({2.0, 2.0, 2.0}, 4, 3));
  }
  SUBCASE("tied quantiles are jittered and flagged") {
    std::vector<double> times{0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0};
    bool jittered = false;
    const auto b = default_knots(times, 6, 3, BasisFamily::MSpline, &jittered);
    CHECK(jittered);
    for (size_t j = 1; j < b.knots().size(); ++j) CHECK(b.knots()[j] > b.knots()[j - 1]);
  }
}

TEST_CASE("evaluation domain") {
  const auto b = BasisSet::mspline({1.0, 2.0, 3.0}, 3);
  CHECK_THROWS_AS(b.eval(0.5), std::domain_error);
  const Vec beyond = b.eval(5.0);
  CHECK(beyond.cwiseAbs().maxCoeff() == 0.0);
  const Vec sat = b.eval_integral(5.0);
  for (int j = 0; j < sat.size(); ++j) CHECK(sat[j] == doctest::Approx(1.0));
}
