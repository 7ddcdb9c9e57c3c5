#include "structest/factors.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "structest/rng.hpp"

using namespace structest;

namespace {

// Nine observed variables driven by three latent factors, mirroring the
// blocked structure of app-category characteristics.
Matrix planted_nine_vars(int n, double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, 9);
  for (int i = 0; i < n; ++i) {
    double f1 = rng.normal(), f2 = rng.normal(), f3 = rng.normal();
    double fs[3] = {f1, f2, f3};
    for (int j = 0; j < 9; ++j)
      x(i, j) = 2.0 * fs[j / 3] + rng.normal(0.0, noise_sd);
  }
  return x;
}

}  // namespace

TEST_CASE("exact collinearity: rank-1 data explains 100% with one factor") {
  Rng rng(3);
  Matrix x(50, 2);
  for (int i = 0; i < 50; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = 2.0 * x(i, 0);
  }
  auto model = extract_factors(x, 1);
  CHECK(model.explained_variance(0) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("planted 3-factor data keeps 85% of variance at m=3") {
  auto model = extract_factors(planted_nine_vars(400, 0.5, 7), 3);
  CHECK(model.cumulative_explained >= 0.85);
}

TEST_CASE("m = p explains all variance") {
  auto model = extract_factors(planted_nine_vars(200, 1.0, 9), 9);
  CHECK(model.cumulative_explained == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("zero-variance column is dropped with a warning flag") {
  Rng rng(5);
  Matrix x(40, 3);
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = 4.2;  // constant
    x(i, 2) = rng.normal();
  }
  auto model = extract_factors(x, 2);
  CHECK(model.dropped_columns);
  CHECK(model.kept_columns == std::vector<int>{0, 2});
}

TEST_CASE("varimax with one factor is the identity") {
  auto model = extract_factors(planted_nine_vars(100, 0.5, 1), 1);
  auto rotated = varimax_rotate(model);
  CHECK(rotated.loadings == model.loadings);
}

TEST_CASE("varimax preserves communalities on random loadings") {
  Rng rng(11);
  FactorModel model;
  model.loadings = Matrix(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) model.loadings(i, j) = rng.normal();
  model.rotation = Matrix::Identity(3, 3);
  model.kept_columns = {0, 1, 2, 3, 4, 5};
  auto rotated = varimax_rotate(model);
  CHECK((rotated.communalities() - model.communalities()).cwiseAbs().maxCoeff() < 1e-8);
  // and the accumulated rotation is orthogonal
  Matrix should_be_eye = rotated.rotation.transpose() * rotated.rotation;
  CHECK((should_be_eye - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("varimax recovers planted simple structure after a random rotation") {
  // Simple structure: each variable loads on exactly one factor.
  Matrix simple = Matrix::Zero(9, 3);
  for (int j = 0; j < 9; ++j) simple(j, j / 3) = (j % 3 == 0) ? 0.9 : 0.7;

  // Mix with a random orthogonal matrix (QR of a random matrix).
  Rng rng(23);
  Matrix noise(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) noise(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(noise);
  Matrix q = qr.householderQ();

  FactorModel mixed;
  mixed.loadings = simple * q;
  mixed.rotation = Matrix::Identity(3, 3);
  mixed.kept_columns = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  auto rotated = varimax_rotate(mixed);

  // Compare against the planted loadings up to column permutation and sign.
  std::vector<int> perm = {0, 1, 2};
  double best = std::numeric_limits<double>::infinity();
  do {
    for (int signs = 0; signs < 8; ++signs) {
      double worst = 0.0;
      for (int f = 0; f < 3; ++f) {
        double sgn = (signs >> f) & 1 ? -1.0 : 1.0;
        worst = std::max(worst, (rotated.loadings.col(f) * sgn -
                                 simple.col(perm[f])).cwiseAbs().maxCoeff());
      }
      best = std::min(best, worst);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(best < 0.05);
}

TEST_CASE("noiseless rank-m data reconstructs exactly from scores") {
  auto x = planted_nine_vars(150, 0.0, 13);
  auto model = extract_factors(x, 3);
  Matrix scores = factor_scores(x, model);
  // Standardized data reconstructed as scores * loadings'
  Matrix z(150, 9);
  for (int jk = 0; jk < 9; ++jk)
    z.col(jk) = (x.col(jk).array() - model.means(jk)) / model.sds(jk);
  Matrix resid = z - scores * model.loadings.transpose();
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("training scores have zero mean and residual orthogonal to loadings") {
  auto x = planted_nine_vars(200, 0.7, 17);
  auto model = extract_factors(x, 3);
  Matrix scores = factor_scores(x, model);
  CHECK(scores.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);

  Matrix z(200, 9);
  for (int jk = 0; jk < 9; ++jk)
    z.col(jk) = (x.col(jk).array() - model.means(jk)) / model.sds(jk);
  Matrix resid = z - scores * model.loadings.transpose();
  CHECK((resid * model.loadings).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("scores match the explicit normal-equation oracle") {
  auto x = planted_nine_vars(60, 0.4, 29);
  auto model = extract_factors(x, 2);
  Matrix scores = factor_scores(x, model);

  Matrix z(60, 9);
  for (int jk = 0; jk < 9; ++jk)
    z.col(jk) = (x.col(jk).array() - model.means(jk)) / model.sds(jk);
  const Matrix& b = model.loadings;
  Matrix oracle = (b.transpose() * b).inverse() * b.transpose() * z.transpose();
  CHECK((scores - oracle.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("extract-rotate-score pipeline is deterministic") {
  auto x = planted_nine_vars(120, 0.6, 31);
  auto m1 = varimax_rotate(extract_factors(x, 3));
  auto m2 = varimax_rotate(extract_factors(x, 3));
  REQUIRE(m1.loadings == m2.loadings);
  REQUIRE(factor_scores(x, m1) == factor_scores(x, m2));
}
