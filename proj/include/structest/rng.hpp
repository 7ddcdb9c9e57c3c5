#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "structest/common.hpp"

namespace structest {

// Deterministic generator with explicit substream derivation. All samplers
// are hand-rolled on top of the raw uniform stream so draws are identical
// across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull;
  }

  // Substream keyed by (seed, index); used for per-unit / per-candidate
  // streams that must not depend on scheduling order.
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix(seed) ^ splitmix(index * 0xbf58476d1ce4e5b9ull + 1));
  }

  std::uint64_t next_u64() {
    // xorshift64* — small, fast, and adequate for Monte Carlo work here.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    // Marsaglia polar method; cached spare kept for the next call.
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  Vector normal_vector(int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  // Marsaglia–Tsang; boost for shape < 1. Floored away from exact zero so
  // heavy-tailed hyper draws (shape near 0) cannot produce singular scales.
  double gamma(double shape, double scale = 1.0) {
    if (shape <= 0.0 || scale <= 0.0) throw std::invalid_argument("gamma: shape/scale > 0");
    if (shape < 1.0) {
      double u = uniform();
      return std::max(gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape), 1e-280);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

  double chi_squared(double dof) { return gamma(0.5 * dof, 2.0); }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  int uniform_int(int n) {  // 0..n-1
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Index draw proportional to (non-negative, not necessarily normalized) w.
  int categorical(const Vector& w) {
    double total = w.sum();
    double u = uniform() * total;
    double acc = 0.0;
    for (int k = 0; k < w.size(); ++k) {
      acc += w(k);
      if (u <= acc) return k;
    }
    return static_cast<int>(w.size()) - 1;
  }

  Vector dirichlet(const Vector& alpha) {
    Vector g(alpha.size());
    for (int i = 0; i < alpha.size(); ++i) g(i) = gamma(alpha(i));
    return g / g.sum();
  }

  Vector mvn(const Vector& mean, const Matrix& cov) {
    Matrix l = cholesky_with_jitter(cov);
    return mean + l * normal_vector(static_cast<int>(mean.size()));
  }

  // Bartlett decomposition draw of W(dof, scale).
  Matrix wishart(double dof, const Matrix& scale) {
    const int d = static_cast<int>(scale.rows());
    require(dof > d - 1, "wishart: dof must exceed dim-1");
    Matrix a = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      a(i, i) = std::sqrt(chi_squared(dof - i));
      for (int j = 0; j < i; ++j) a(i, j) = normal();
    }
    Matrix l = cholesky_with_jitter(scale);
    Matrix la = l * a;
    return la * la.transpose();
  }

  // If X ~ W(dof, S^{-1}) then X^{-1} ~ IW(dof, S). The inversion is jittered
  // relative to the draw's own scale: dof barely above d-1 can produce a
  // numerically rank-deficient draw whose raw inverse overflows.
  Matrix inverse_wishart(double dof, const Matrix& scale) {
    Matrix s_inv = scale.llt().solve(Matrix::Identity(scale.rows(), scale.cols()));
    Matrix w = wishart(dof, symmetrize(s_inv));
    double jitter = 1e-12 * std::max(w.diagonal().maxCoeff(), 1e-280);
    w += jitter * Matrix::Identity(w.rows(), w.cols());
    return symmetrize(w.llt().solve(Matrix::Identity(w.rows(), w.cols())));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace structest
