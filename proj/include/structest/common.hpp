#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace structest {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Contract violations (bad arguments, dimension mismatches) are
// invalid_argument; numeric failures discovered mid-computation are
// runtime_error.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Force exact symmetry; cheap and applied after every covariance update.
inline Matrix symmetrize(const Matrix& p) { return 0.5 * (p + p.transpose()); }

inline double min_eigenvalue(const Matrix& p) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(p), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_psd(const Matrix& p, double tol = 1e-9) {
  if (p.rows() != p.cols()) return false;
  return min_eigenvalue(p) >= -tol;
}

// Cholesky with one jitter retry (1e-9 on the diagonal), used by the filters.
inline Matrix cholesky_with_jitter(const Matrix& p, double jitter = 1e-9) {
  Eigen::LLT<Matrix> llt(symmetrize(p));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Matrix repaired = symmetrize(p) + jitter * Matrix::Identity(p.rows(), p.cols());
  Eigen::LLT<Matrix> retry(repaired);
  if (retry.info() == Eigen::Success) return retry.matrixL();
  throw std::runtime_error("cholesky failed even after jitter repair");
}

inline double log_sum_exp(const Vector& x) {
  double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

// Gaussian log density, multivariate.
inline double mvn_logpdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  const auto d = static_cast<double>(x.size());
  Eigen::LLT<Matrix> llt(symmetrize(cov));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("mvn_logpdf: covariance not positive definite");
  Matrix l = llt.matrixL();
  Vector z = l.triangularView<Eigen::Lower>().solve(x - mean);
  double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (d * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

inline double normal_logpdf(double x, double mean, double var) {
  double z = x - mean;
  return -0.5 * (std::log(2.0 * M_PI * var) + z * z / var);
}

// Deterministic parallel map: each index writes its own slot, so the result
// does not depend on scheduling. nthreads <= 1 runs inline.
inline void parallel_for(std::size_t n, int nthreads,
                         const std::function<void(std::size_t)>& body) {
  if (nthreads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const auto workers = static_cast<std::size_t>(nthreads);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace structest
