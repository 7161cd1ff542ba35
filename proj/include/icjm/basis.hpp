#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace icjm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class BasisFamily { MSpline, BSpline, Polynomial, Indicator };

std::string to_string(BasisFamily f);
BasisFamily basis_family_from_string(const std::string& s);

// Gauss-Legendre rule on [a, b]; exact for polynomials up to degree 2n-1.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule quadrature(double a, double b, int n);

struct PenaltyMatrix {
  Mat entries;
  // set when the family has no curvature (indicator, linear pieces)
  bool zero_penalty = false;
};

// A set of basis functions stored in exact piecewise-polynomial form on the
// segments between distinct knots. Splines are built by the order recursion,
// so derivatives, integrals and penalty cross-products are all exact.
class BasisSet {
 public:
  BasisSet() : knots_{0.0, 1.0} {}  // empty basis (size 0)

  static BasisSet mspline(std::vector<double> knots, int order);
  static BasisSet bspline(std::vector<double> knots, int order);
  static BasisSet polynomial(int degree, double lo, double hi);
  static BasisSet indicator(std::vector<double> cell_edges);

  BasisFamily family() const { return family_; }
  int order() const { return order_; }
  int size() const { return size_; }
  double lower() const { return knots_.front(); }
  double upper() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }

  // values (psi_1(t), ..., psi_size(t)); zero beyond the upper boundary,
  // domain error below the lower boundary
  Vec eval(double t) const;
  // d-th derivative, same support conventions as eval
  Vec eval_deriv(double t, int d) const;
  // entry u is int_{lower}^{t} psi_u(s) ds; saturates beyond the support
  Vec eval_integral(double t) const;

  // matrix of int psi_u'' psi_v'' over the support
  PenaltyMatrix penalty_matrix() const;

  // serialization helpers for model-spec files
  std::string family_name() const { return to_string(family_); }

 private:
  void eval_local(double t, int d, double* out) const;
  int segment_of(double t) const;

  BasisFamily family_ = BasisFamily::MSpline;
  int order_ = 0;  // spline order (polynomial pieces of degree order-1)
  int size_ = 0;
  std::vector<double> knots_;  // distinct breakpoints, ascending
  // coef_[f][s][j]: coefficient of (t - knots_[s])^j for function f on segment s
  std::vector<std::vector<std::vector<double>>> coef_;
  // per function per segment: integral of the function over segments [0, s)
  std::vector<std::vector<double>> cum_int_;
};

// m ~ round(n0^{1/3}) clamped to [order, 20]
int default_basis_size(int n0, int order);

// Interior knots at equally spaced quantiles of `times`, boundary knots at
// min/max. Duplicated quantiles are jittered and flagged through `jittered`.
BasisSet default_knots(const std::vector<double>& times, int m, int order,
                       BasisFamily family = BasisFamily::MSpline,
                       bool* jittered = nullptr);

}  // namespace icjm
