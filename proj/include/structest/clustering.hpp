#pragma once

#include <algorithm>
#include <vector>

#include "structest/common.hpp"
#include "structest/rng.hpp"

namespace structest {

// Hard assignment of units to clusters, ids in [0, k).
struct Partition {
  std::vector<int> assignment;
  int k = 0;

  int size() const { return static_cast<int>(assignment.size()); }

  void validate() const {
    require(k >= 1, "partition: k >= 1");
    for (int a : assignment) require(a >= 0 && a < k, "partition: id out of range");
  }

  std::vector<int> counts() const {
    std::vector<int> c(k, 0);
    for (int a : assignment) ++c[a];
    return c;
  }
};

enum class KmeansInit { random, plus_plus };

struct KmeansResult {
  Partition partition;
  Matrix centroids;
  double wss = 0.0;
  int iterations = 0;
};

// Lloyd iterations; an emptied cluster is reseeded to the point farthest from
// its current centroid, which keeps WSS non-increasing checks meaningful.
inline KmeansResult kmeans(const Matrix& data, int k,
                           KmeansInit init = KmeansInit::plus_plus,
                           int max_iter = 100, std::uint64_t seed = 0) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  require(k >= 1 && k <= n, "kmeans: need 1 <= k <= #units");
  require(all_finite(data), "kmeans: data must be finite");

  Rng rng(seed);
  Matrix centroids(k, d);
  if (init == KmeansInit::random) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int c = 0; c < k; ++c) {
      int pick = c + rng.uniform_int(n - c);
      std::swap(idx[c], idx[pick]);
      centroids.row(c) = data.row(idx[c]);
    }
  } else {
    // k-means++: D^2-weighted seeding.
    centroids.row(0) = data.row(rng.uniform_int(n));
    Vector d2 = (data.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
      int pick = d2.sum() > 0.0 ? rng.categorical(d2) : rng.uniform_int(n);
      centroids.row(c) = data.row(pick);
      Vector nd = (data.rowwise() - centroids.row(c)).rowwise().squaredNorm();
      d2 = d2.cwiseMin(nd);
    }
  }

  KmeansResult res;
  res.partition.k = k;
  res.partition.assignment.assign(n, 0);
  double prev_wss = std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    double wss = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (data.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double dist = (data.row(i) - centroids.row(c)).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (res.partition.assignment[i] != best) changed = true;
      res.partition.assignment[i] = best;
      wss += best_d;
    }
    res.wss = wss;
    res.iterations = it + 1;

    Matrix sums = Matrix::Zero(k, d);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(res.partition.assignment[i]) += data.row(i);
      ++counts[res.partition.assignment[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.row(c) = sums.row(c) / counts[c];
      } else {
        // Reseed the empty cluster to the farthest point from its assignment.
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double dist =
              (data.row(i) - centroids.row(res.partition.assignment[i])).squaredNorm();
          if (dist > far_d) {
            far_d = dist;
            far = i;
          }
        }
        centroids.row(c) = data.row(far);
        changed = true;
      }
    }
    if (!changed && wss >= prev_wss - 1e-15) break;
    prev_wss = wss;
  }
  res.centroids = centroids;
  return res;
}

enum class CovMode { full, diagonal };

struct GaussianMixture {
  int k = 0;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  Vector weights;

  // Hard assignment: argmax responsibility, ties to the lowest id.
  Partition hard_assign(const Matrix& resp) const {
    Partition p;
    p.k = k;
    p.assignment.resize(resp.rows());
    for (int i = 0; i < resp.rows(); ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (resp(i, c) > resp(i, best)) best = c;
      p.assignment[i] = best;
    }
    return p;
  }
};

struct GmmResult {
  GaussianMixture mixture;
  Matrix responsibilities;  // n x k, rows sum to 1
  std::vector<double> loglik_trace;
  double bic = 0.0;
  bool ridge_applied = false;
};

// E-step for a given mixture; rows sum to 1.
inline Matrix gmm_responsibilities(const Matrix& data, const GaussianMixture& mix) {
  Matrix resp(data.rows(), mix.k);
  for (int i = 0; i < data.rows(); ++i) {
    Vector logd(mix.k);
    for (int c = 0; c < mix.k; ++c)
      logd(c) = std::log(mix.weights(c)) +
                mvn_logpdf(data.row(i).transpose(), mix.means[c], mix.covariances[c]);
    double lse = log_sum_exp(logd);
    resp.row(i) = (logd.array() - lse).exp().transpose();
  }
  return resp;
}

namespace detail {

inline double gmm_free_params(int k, int d, CovMode mode) {
  double cov_terms = mode == CovMode::full ? d * (d + 1) / 2.0 : d;
  return (k - 1) + k * d + k * cov_terms;
}

}  // namespace detail

inline GmmResult gmm_em(const Matrix& data, int k, CovMode mode = CovMode::full,
                        double tol = 1e-8, int max_iter = 500, std::uint64_t seed = 0) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  require(k >= 1, "gmm: k >= 1");
  require(n > k, "gmm: need more units than components");
  require(all_finite(data), "gmm: data must be finite");

  GmmResult res;
  auto& mix = res.mixture;
  mix.k = k;
  mix.weights = Vector::Constant(k, 1.0 / k);

  // Means from k-means++ centers; shared data covariance to start.
  auto km = kmeans(data, k, KmeansInit::plus_plus, 25, seed);
  Vector grand = data.colwise().mean();
  Matrix centered = data.rowwise() - grand.transpose();
  Matrix shared = (centered.transpose() * centered) / n;
  shared += 1e-6 * Matrix::Identity(d, d);
  if (mode == CovMode::diagonal) shared = shared.diagonal().asDiagonal();
  for (int c = 0; c < k; ++c) {
    mix.means.push_back(km.centroids.row(c).transpose());
    mix.covariances.push_back(shared);
  }

  res.responsibilities.resize(n, k);
  Matrix logdens(n, k);
  const double var_floor = 1e-6 * shared.diagonal().mean();
  double prev = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iter; ++it) {
    for (int c = 0; c < k; ++c) {
      for (int i = 0; i < n; ++i)
        logdens(i, c) = std::log(mix.weights(c)) +
                        mvn_logpdf(data.row(i).transpose(), mix.means[c],
                                   mix.covariances[c]);
    }
    double loglik = 0.0;
    for (int i = 0; i < n; ++i) {
      Vector row = logdens.row(i).transpose();
      double lse = log_sum_exp(row);
      loglik += lse;
      res.responsibilities.row(i) = (row.array() - lse).exp().transpose();
    }
    res.loglik_trace.push_back(loglik);

    // M-step
    Vector nk = res.responsibilities.colwise().sum().transpose();
    mix.weights = nk / n;
    for (int c = 0; c < k; ++c) {
      Vector mu = Vector::Zero(d);
      for (int i = 0; i < n; ++i)
        mu += res.responsibilities(i, c) * data.row(i).transpose();
      mu /= std::max(nk(c), 1e-300);
      Matrix cov = Matrix::Zero(d, d);
      for (int i = 0; i < n; ++i) {
        Vector diff = data.row(i).transpose() - mu;
        cov += res.responsibilities(i, c) * (diff * diff.transpose());
      }
      cov /= std::max(nk(c), 1e-300);
      if (mode == CovMode::diagonal) cov = cov.diagonal().asDiagonal();
      // Collapse guard: ridge on near-singular determinant, plus an
      // eigenvalue floor so a component cannot shrink onto a lone point and
      // blow up the likelihood.
      if (cov.determinant() < 1e-300 || min_eigenvalue(cov) < var_floor) {
        cov += std::max(1e-6, var_floor) * Matrix::Identity(d, d);
        res.ridge_applied = true;
      }
      mix.means[c] = mu;
      mix.covariances[c] = symmetrize(cov);
    }

    if (loglik - prev < tol && it > 0) break;
    prev = loglik;
  }

  double loglik = res.loglik_trace.back();
  res.bic = -2.0 * loglik + detail::gmm_free_params(k, d, mode) * std::log(n);
  return res;
}

// BIC selection over a k range; ties go to the smaller k.
inline int gmm_select(const Matrix& data, const std::vector<int>& k_range,
                      CovMode mode = CovMode::full, std::uint64_t seed = 0) {
  require(!k_range.empty(), "gmm_select: empty k range");
  int best_k = -1;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int k : k_range) {
    double bic = gmm_em(data, k, mode, 1e-8, 300, seed).bic;
    if (bic < best_bic - 1e-12 || (std::abs(bic - best_bic) <= 1e-12 && k < best_k)) {
      best_bic = bic;
      best_k = k;
    }
  }
  return best_k;
}

// Hubert–Arabie adjusted Rand index.
inline double adjusted_rand_index(const Partition& p1, const Partition& p2) {
  require(p1.assignment.size() == p2.assignment.size(),
          "ari: partitions must cover the same unit set");
  p1.validate();
  p2.validate();
  const int n = p1.size();
  Matrix table = Matrix::Zero(p1.k, p2.k);
  for (int i = 0; i < n; ++i) table(p1.assignment[i], p2.assignment[i]) += 1.0;

  auto choose2 = [](double m) { return 0.5 * m * (m - 1.0); };
  double sum_ij = 0.0;
  for (int a = 0; a < p1.k; ++a)
    for (int b = 0; b < p2.k; ++b) sum_ij += choose2(table(a, b));
  double sum_a = 0.0, sum_b = 0.0;
  for (int a = 0; a < p1.k; ++a) sum_a += choose2(table.row(a).sum());
  for (int b = 0; b < p2.k; ++b) sum_b += choose2(table.col(b).sum());

  double expected = sum_a * sum_b / choose2(static_cast<double>(n));
  double maximum = 0.5 * (sum_a + sum_b);
  if (std::abs(maximum - expected) < 1e-12)
    return sum_ij == maximum ? 1.0 : 0.0;  // degenerate marginals
  return (sum_ij - expected) / (maximum - expected);
}

// Consensus of several partitions: average-linkage agglomerative clustering on
// pairwise co-assignment disagreement, cut at k_cut. Merge ties break toward
// the lowest index pair for determinism.
inline Partition ensemble_consensus(const std::vector<Partition>& partitions,
                                    int k_cut = 5) {
  require(partitions.size() >= 2, "consensus: need at least 2 partitions");
  const int n = partitions.front().size();
  for (const auto& p : partitions)
    require(p.size() == n, "consensus: partitions must cover the same units");
  require(k_cut >= 1 && k_cut <= n, "consensus: k_cut must be within unit count");

  // Distance = 1 - fraction of partitions that co-assign the pair.
  Matrix dist = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      int agree = 0;
      for (const auto& p : partitions)
        if (p.assignment[i] == p.assignment[j]) ++agree;
      double frac = static_cast<double>(agree) / partitions.size();
      dist(i, j) = dist(j, i) = 1.0 - frac;
    }
  }

  std::vector<std::vector<int>> clusters(n);
  for (int i = 0; i < n; ++i) clusters[i] = {i};

  auto avg_linkage = [&](const std::vector<int>& a, const std::vector<int>& b) {
    double s = 0.0;
    for (int i : a)
      for (int j : b) s += dist(i, j);
    return s / (a.size() * b.size());
  };

  while (static_cast<int>(clusters.size()) > k_cut) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double link = avg_linkage(clusters[i], clusters[j]);
        if (link < best) {
          best = link;
          bi = i;
          bj = j;
        }
      }
    }
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<long>(bj));
  }

  Partition out;
  out.k = static_cast<int>(clusters.size());
  out.assignment.assign(n, 0);
  // Stable ids: order clusters by their smallest member.
  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) {
              return *std::min_element(a.begin(), a.end()) <
                     *std::min_element(b.begin(), b.end());
            });
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (int i : clusters[c]) out.assignment[i] = static_cast<int>(c);
  return out;
}

}  // namespace structest
