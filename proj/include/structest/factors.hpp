#pragma once

#include <vector>

#include "structest/common.hpp"

namespace structest {

// Principal-component factor model on standardized data, with an optional
// varimax rotation. Column means/sds are stored so new data can be scored.
struct FactorModel {
  Matrix loadings;             // p_kept x m
  Matrix rotation;             // m x m orthogonal (identity until rotated)
  Vector explained_variance;   // per-factor share of total variance
  double cumulative_explained = 0.0;
  Vector means;                // per kept column
  Vector sds;
  std::vector<int> kept_columns;  // zero-variance columns are dropped
  bool dropped_columns = false;

  int n_factors() const { return static_cast<int>(loadings.cols()); }

  Vector communalities() const { return loadings.array().square().rowwise().sum(); }
};

inline FactorModel extract_factors(const Matrix& x, int m) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  require(n >= 2 && p >= 1, "factors: need data");
  require(all_finite(x), "factors: data must be finite");
  require(m >= 1 && m <= p, "factors: 1 <= m <= p");

  FactorModel model;
  Vector mean = x.colwise().mean();
  Vector sd(p);
  for (int j = 0; j < p; ++j) {
    double v = (x.col(j).array() - mean(j)).square().sum() / (n - 1);
    sd(j) = std::sqrt(v);
    if (sd(j) > 1e-12) {
      model.kept_columns.push_back(j);
    } else {
      model.dropped_columns = true;
    }
  }
  const int pk = static_cast<int>(model.kept_columns.size());
  require(pk >= m, "factors: too few non-degenerate columns for m factors");

  model.means.resize(pk);
  model.sds.resize(pk);
  Matrix z(n, pk);
  for (int jk = 0; jk < pk; ++jk) {
    int j = model.kept_columns[jk];
    model.means(jk) = mean(j);
    model.sds(jk) = sd(j);
    z.col(jk) = (x.col(j).array() - mean(j)) / sd(j);
  }

  Matrix corr = z.transpose() * z / (n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(corr));
  // Eigen returns ascending order; take the top m.
  model.loadings.resize(pk, m);
  model.explained_variance.resize(m);
  for (int f = 0; f < m; ++f) {
    int idx = pk - 1 - f;
    double ev = std::max(es.eigenvalues()(idx), 0.0);
    model.loadings.col(f) = es.eigenvectors().col(idx) * std::sqrt(ev);
    model.explained_variance(f) = ev / pk;
  }
  // Sign convention: largest-magnitude loading in each column positive.
  for (int f = 0; f < m; ++f) {
    int arg = 0;
    model.loadings.col(f).cwiseAbs().maxCoeff(&arg);
    if (model.loadings(arg, f) < 0.0) model.loadings.col(f) = -model.loadings.col(f);
  }
  model.rotation = Matrix::Identity(m, m);
  model.cumulative_explained = model.explained_variance.sum();
  return model;
}

// Raw varimax via pairwise plane rotations; communalities are invariant.
inline FactorModel varimax_rotate(const FactorModel& model, double tol = 1e-10) {
  FactorModel out = model;
  const int m = model.n_factors();
  if (m < 2) return out;

  Matrix a = model.loadings;
  const int p = static_cast<int>(a.rows());
  Matrix rot = Matrix::Identity(m, m);

  auto criterion = [&](const Matrix& l) {
    double q = 0.0;
    for (int f = 0; f < m; ++f) {
      double s2 = l.col(f).array().square().sum();
      double s4 = l.col(f).array().pow(4).sum();
      q += s4 / p - (s2 / p) * (s2 / p);
    }
    return q;
  };

  double prev = criterion(a);
  for (int sweep = 0; sweep < 100; ++sweep) {
    for (int i = 0; i < m - 1; ++i) {
      for (int j = i + 1; j < m; ++j) {
        Vector u = a.col(i).array().square() - a.col(j).array().square();
        Vector v = 2.0 * a.col(i).array() * a.col(j).array();
        double num = 2.0 * (u.dot(v) - u.sum() * v.sum() / p);
        double den = u.squaredNorm() - v.squaredNorm() -
                     (u.sum() * u.sum() - v.sum() * v.sum()) / p;
        double phi = 0.25 * std::atan2(num, den);
        if (std::abs(phi) < 1e-14) continue;
        double c = std::cos(phi), s = std::sin(phi);
        Vector ai = a.col(i), aj = a.col(j);
        a.col(i) = c * ai + s * aj;
        a.col(j) = -s * ai + c * aj;
        Vector ri = rot.col(i), rj = rot.col(j);
        rot.col(i) = c * ri + s * rj;
        rot.col(j) = -s * ri + c * rj;
      }
    }
    double cur = criterion(a);
    if (cur - prev < tol) break;
    prev = cur;
  }

  for (int f = 0; f < m; ++f) {
    int arg = 0;
    a.col(f).cwiseAbs().maxCoeff(&arg);
    if (a(arg, f) < 0.0) {
      a.col(f) = -a.col(f);
      rot.col(f) = -rot.col(f);
    }
  }
  out.loadings = a;
  out.rotation = model.rotation * rot;
  return out;
}

// Least-squares factor scores: F = Z B (B'B)^{-1}; the reconstruction
// residual is orthogonal to the loadings by construction.
inline Matrix factor_scores(const Matrix& x_new, const FactorModel& model) {
  require(x_new.cols() >= static_cast<int>(model.kept_columns.empty()
                                               ? model.loadings.rows()
                                               : model.kept_columns.back() + 1),
          "factor_scores: column count mismatch");
  const int n = static_cast<int>(x_new.rows());
  const int pk = static_cast<int>(model.loadings.rows());
  Matrix z(n, pk);
  for (int jk = 0; jk < pk; ++jk) {
    int j = model.kept_columns[jk];
    z.col(jk) = (x_new.col(j).array() - model.means(jk)) / model.sds(jk);
  }
  Matrix btb = model.loadings.transpose() * model.loadings;
  return btb.llt().solve(model.loadings.transpose() * z.transpose()).transpose();
}

}  // namespace structest
