#pragma once

#include <functional>
#include <sstream>

#include "structest/common.hpp"

namespace structest {

namespace detail {

inline double simpson(const std::function<double(double)>& f, double a, double fa,
                      double b, double fb, double m, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a,
                                   double fa, double b, double fb, double m, double fm,
                                   double whole, double tol, int depth) {
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = simpson(f, a, fa, m, fm, lm, flm);
  double right = simpson(f, m, fm, b, fb, rm, frm);
  double delta = left + right - whole;
  if (depth <= 0) {
    std::ostringstream os;
    os << "adaptive quadrature failed to converge on [" << a << ", " << b << "]";
    throw std::runtime_error(os.str());
  }
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson integration of f over [a, b] to absolute tolerance tol.
inline double adaptive_quadrature(const std::function<double(double)>& f, double a,
                                  double b, double tol, int max_depth = 40) {
  if (a == b) return 0.0;
  double sign = 1.0;
  if (a > b) {
    std::swap(a, b);
    sign = -1.0;
  }
  double m = 0.5 * (a + b);
  double fa = f(a), fb = f(b), fm = f(m);
  if (!std::isfinite(fa) || !std::isfinite(fb) || !std::isfinite(fm))
    throw std::runtime_error("adaptive quadrature: non-finite integrand");
  double whole = detail::simpson(f, a, fa, b, fb, m, fm);
  return sign *
         detail::adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

// Gauss–Hermite abscissas/weights for E[h(X)], X ~ N(mean, sd^2), computed by
// Golub–Welsch on the Jacobi matrix (deterministic for a fixed node count).
struct GaussHermite {
  Vector nodes;    // standardized z points
  Vector weights;  // sum to 1

  explicit GaussHermite(int n) {
    Matrix jacobi = Matrix::Zero(n, n);
    for (int i = 1; i < n; ++i) {
      double off = std::sqrt(i / 2.0);
      jacobi(i - 1, i) = off;
      jacobi(i, i - 1) = off;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(jacobi);
    nodes = es.eigenvalues() * std::sqrt(2.0);  // to N(0,1) scale
    weights.resize(n);
    for (int i = 0; i < n; ++i) {
      double v0 = es.eigenvectors()(0, i);
      weights(i) = v0 * v0;
    }
  }
};

}  // namespace structest
