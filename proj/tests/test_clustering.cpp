#include "structest/clustering.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "structest/rng.hpp"

using namespace structest;

namespace {

Matrix two_blobs(int per_blob, double sep, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Matrix data(2 * per_blob, 2);
  for (int i = 0; i < per_blob; ++i) {
    data(i, 0) = rng.normal(0.0, sigma);
    data(i, 1) = rng.normal(0.0, sigma);
    data(per_blob + i, 0) = rng.normal(sep, sigma);
    data(per_blob + i, 1) = rng.normal(sep, sigma);
  }
  return data;
}

Partition truth_two_blobs(int per_blob) {
  Partition p;
  p.k = 2;
  p.assignment.assign(2 * per_blob, 0);
  for (int i = 0; i < per_blob; ++i) p.assignment[per_blob + i] = 1;
  return p;
}

// Brute-force pair-counting ARI oracle: walk all unordered pairs.
double ari_pair_oracle(const Partition& p1, const Partition& p2) {
  const int n = p1.size();
  double a = 0, b = 0, c = 0, d = 0;  // same/same, same/diff, diff/same, diff/diff
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      bool s1 = p1.assignment[i] == p1.assignment[j];
      bool s2 = p2.assignment[i] == p2.assignment[j];
      if (s1 && s2) ++a;
      else if (s1 && !s2) ++b;
      else if (!s1 && s2) ++c;
      else ++d;
    }
  }
  double total = a + b + c + d;
  double expected = (a + b) * (a + c) / total;
  double maximum = 0.5 * ((a + b) + (a + c));
  return (a - expected) / (maximum - expected);
}

}  // namespace

TEST_CASE("kmeans separates two planted blobs in at least 9 of 10 seeds") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Matrix data = two_blobs(30, 10.0, 0.5, 100 + seed);
    auto res = kmeans(data, 2, KmeansInit::plus_plus, 100, seed);
    if (adjusted_rand_index(res.partition, truth_two_blobs(30)) == 1.0) ++hits;
  }
  CHECK(hits >= 9);
}

TEST_CASE("kmeans boundary cases: k equals units and k equals one") {
  Matrix data = two_blobs(5, 4.0, 0.3, 1);
  auto all = kmeans(data, static_cast<int>(data.rows()), KmeansInit::plus_plus, 50, 3);
  CHECK(all.wss == Catch::Approx(0.0).margin(1e-12));

  auto one = kmeans(data, 1, KmeansInit::random, 50, 3);
  Vector grand = data.colwise().mean();
  double total_ss = (data.rowwise() - grand.transpose()).squaredNorm();
  CHECK(one.wss == Catch::Approx(total_ss).margin(1e-8));
}

TEST_CASE("gmm with k=1 matches sample moments") {
  Rng rng(17);
  Matrix data(200, 2);
  for (int i = 0; i < 200; ++i) {
    data(i, 0) = rng.normal(1.0, 2.0);
    data(i, 1) = rng.normal(-3.0, 0.5);
  }
  auto res = gmm_em(data, 1, CovMode::full, 1e-10, 200, 0);
  Vector mean = data.colwise().mean();
  Matrix centered = data.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / data.rows();
  CHECK((res.mixture.means[0] - mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((res.mixture.covariances[0] - cov).cwiseAbs().maxCoeff() < 2e-6);
}

TEST_CASE("gmm loglik trace is monotone and responsibilities sum to one") {
  Matrix data = two_blobs(40, 6.0, 1.0, 5);
  auto res = gmm_em(data, 2, CovMode::full, 1e-8, 200, 2);
  for (std::size_t i = 1; i < res.loglik_trace.size(); ++i)
    CHECK(res.loglik_trace[i] >= res.loglik_trace[i - 1] - 1e-8);
  Vector row_sums = res.responsibilities.rowwise().sum();
  CHECK((row_sums.array() - 1.0).abs().maxCoeff() < 1e-10);
}

TEST_CASE("gmm responsibilities split 0.5/0.5 at the symmetric midpoint") {
  GaussianMixture mix;
  mix.k = 2;
  mix.weights = Vector::Constant(2, 0.5);
  mix.means = {Vector::Constant(1, -3.0), Vector::Constant(1, 3.0)};
  mix.covariances = {Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  Matrix point(1, 1);
  point << 0.0;
  Matrix resp = gmm_responsibilities(point, mix);
  CHECK(resp(0, 0) == Catch::Approx(0.5).margin(1e-12));
  CHECK(resp(0, 1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("bic selects 3 components on a planted 3-cluster mixture in 9 of 10 seeds") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    Matrix data(150, 2);
    for (int i = 0; i < 150; ++i) {
      int c = i % 3;
      double cx = c == 0 ? 0.0 : (c == 1 ? 12.0 : -12.0);
      double cy = c == 0 ? 0.0 : (c == 1 ? 10.0 : 8.0);
      data(i, 0) = rng.normal(cx, 1.0);
      data(i, 1) = rng.normal(cy, 1.0);
    }
    if (gmm_select(data, {1, 2, 3, 4, 5, 6}, CovMode::full, seed) == 3) ++hits;
  }
  CHECK(hits >= 9);
}

TEST_CASE("gmm_select boundary behavior") {
  Matrix data = two_blobs(20, 8.0, 0.6, 9);
  CHECK(gmm_select(data, {4}) == 4);  // singleton range

  Matrix identical = Matrix::Zero(30, 2);  // degenerate: all rows equal
  CHECK(gmm_select(identical, {1, 2, 3}) == 1);
}

TEST_CASE("ari: identical partitions give exactly 1") {
  Partition p;
  p.k = 3;
  p.assignment = {0, 1, 2, 0, 1, 2, 0};
  CHECK(adjusted_rand_index(p, p) == 1.0);
}

TEST_CASE("ari matches the hand pair-counting oracle on the 5-element fixture") {
  // p1 = { {a,b}, {c,d,e} }, p2 = { {a,b,c}, {d,e} }
  Partition p1{{0, 0, 1, 1, 1}, 2};
  Partition p2{{0, 0, 0, 1, 1}, 2};
  double got = adjusted_rand_index(p1, p2);
  CHECK(got == Catch::Approx(ari_pair_oracle(p1, p2)).margin(1e-12));
  CHECK(got == Catch::Approx(adjusted_rand_index(p2, p1)).margin(1e-15));
}

TEST_CASE("ari is invariant to label permutation") {
  Partition p1{{0, 0, 1, 1, 2, 2}, 3};
  Partition p2{{2, 2, 0, 0, 1, 1}, 3};  // same partition, relabeled
  CHECK(adjusted_rand_index(p1, p2) == 1.0);
}

TEST_CASE("ari null distribution: mean near zero over 100 random pairs") {
  Rng rng(77);
  double sum = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    Partition p1, p2;
    p1.k = p2.k = 5;
    for (int i = 0; i < 50; ++i) {
      p1.assignment.push_back(rng.uniform_int(5));
      p2.assignment.push_back(rng.uniform_int(5));
    }
    sum += adjusted_rand_index(p1, p2);
  }
  CHECK(std::abs(sum / 100.0) < 0.05);
}

TEST_CASE("ari rejects mismatched unit sets") {
  Partition p1{{0, 1}, 2};
  Partition p2{{0, 1, 0}, 2};
  CHECK_THROWS_AS(adjusted_rand_index(p1, p2), std::invalid_argument);
}

TEST_CASE("consensus of identical partitions returns the same structure") {
  Partition p{{0, 0, 1, 1, 2, 2}, 3};
  auto consensus = ensemble_consensus({p, p, p}, 3);
  CHECK(adjusted_rand_index(consensus, p) == 1.0);
}

TEST_CASE("consensus recovers a planted 2-block structure against one random voter") {
  const int n = 40;
  Partition truth;
  truth.k = 2;
  for (int i = 0; i < n; ++i) truth.assignment.push_back(i < n / 2 ? 0 : 1);
  Partition noisy;
  noisy.k = 4;
  Rng rng(13);
  for (int i = 0; i < n; ++i) noisy.assignment.push_back(rng.uniform_int(4));
  auto consensus = ensemble_consensus({truth, truth, noisy}, 2);
  CHECK(adjusted_rand_index(consensus, truth) > 0.9);
}

TEST_CASE("consensus rejects k_cut above the unit count") {
  Partition p{{0, 1}, 2};
  CHECK_THROWS_AS(ensemble_consensus({p, p}, 3), std::invalid_argument);
}

TEST_CASE("kmeans wss never increases across Lloyd iterations") {
  // Track by re-running with increasing max_iter; wss is monotone in iterations.
  Matrix data = two_blobs(25, 3.0, 1.2, 21);
  double prev = std::numeric_limits<double>::infinity();
  for (int iters = 1; iters <= 8; ++iters) {
    auto res = kmeans(data, 3, KmeansInit::random, iters, 5);
    CHECK(res.wss <= prev + 1e-10);
    prev = res.wss;
  }
}
