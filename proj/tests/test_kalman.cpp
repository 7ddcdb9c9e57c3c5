#include "structest/kalman.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "structest/rng.hpp"

using namespace structest;

namespace {

LinearStateSpace scalar_model(double a, double c, double w, double h, double v) {
  LinearStateSpace m;
  m.transition = Matrix::Constant(1, 1, a);
  m.drift = Vector::Constant(1, c);
  m.state_noise = Matrix::Constant(1, 1, w);
  m.obs_map = Matrix::Constant(1, 1, h);
  m.obs_noise = Matrix::Constant(1, 1, v);
  return m;
}

GaussianBelief scalar_prior(double mean, double var) {
  GaussianBelief b;
  b.mean = Vector::Constant(1, mean);
  b.cov = Matrix::Constant(1, 1, var);
  return b;
}

// Joint-Gaussian oracle: assemble the T x T covariance of (y_1..y_T) for a
// scalar model explicitly and evaluate the log density directly.
double joint_gaussian_loglik(const std::vector<double>& y, double a, double c,
                             double w, double h, double v, double m0, double p0) {
  const int t_len = static_cast<int>(y.size());
  Vector state_mean(t_len);
  Vector state_var(t_len);
  double m = m0, p = p0;
  for (int t = 0; t < t_len; ++t) {
    m = a * m + c;
    p = a * a * p + w;
    state_mean(t) = m;
    state_var(t) = p;
  }
  Matrix cov(t_len, t_len);
  for (int t = 0; t < t_len; ++t) {
    for (int s = t; s < t_len; ++s) {
      double cxx = state_var(t) * std::pow(a, s - t);
      cov(t, s) = h * h * cxx + (s == t ? v : 0.0);
      cov(s, t) = cov(t, s);
    }
  }
  Vector yv(t_len), mu(t_len);
  for (int t = 0; t < t_len; ++t) {
    yv(t) = y[t];
    mu(t) = h * state_mean(t);
  }
  return mvn_logpdf(yv, mu, cov);
}

}  // namespace

TEST_CASE("conjugate Gaussian update: prior N(0,1), obs 2 -> posterior N(1, 0.5)") {
  auto model = scalar_model(1.0, 0.0, 0.0, 1.0, 1.0);
  auto out = kf_filter(to_observations({2.0}), model, scalar_prior(0.0, 1.0));
  REQUIRE(out.filtered.size() == 1);
  CHECK(out.filtered[0].mean(0) == Catch::Approx(1.0).margin(1e-10));
  CHECK(out.filtered[0].cov(0, 0) == Catch::Approx(0.5).margin(1e-10));
}

TEST_CASE("kf loglik matches joint-Gaussian oracle at T=3") {
  const double a = 0.9, c = 0.3, w = 0.4, h = 1.2, v = 0.7;
  std::vector<double> y = {1.1, -0.4, 2.3};
  auto out = kf_filter(to_observations(y), scalar_model(a, c, w, h, v),
                       scalar_prior(0.2, 1.5));
  double oracle = joint_gaussian_loglik(y, a, c, w, h, v, 0.2, 1.5);
  CHECK(out.loglik == Catch::Approx(oracle).margin(1e-8));
}

TEST_CASE("missing observation step leaves filtered equal to predicted") {
  auto model = scalar_model(0.95, 0.1, 0.2, 1.0, 0.5);
  std::vector<Observation> series = to_observations({1.0, 2.0, 3.0});
  series[1] = std::nullopt;
  auto out = kf_filter(series, model, scalar_prior(0.0, 1.0));
  CHECK(out.filtered[1].mean == out.predicted[1].mean);
  CHECK(out.filtered[1].cov == out.predicted[1].cov);
  // loglik only counts the two observed steps
  std::vector<Observation> full = to_observations({1.0, 3.0});
  CHECK(std::isfinite(out.loglik));
}

TEST_CASE("kf rejects bad inputs") {
  auto model = scalar_model(1.0, 0.0, 1.0, 1.0, 1.0);
  CHECK_THROWS_AS(kf_filter({}, model, scalar_prior(0, 1)), std::invalid_argument);
  auto bad = model;
  bad.obs_noise = Matrix::Constant(1, 1, -1.0);
  CHECK_THROWS_AS(kf_filter(to_observations({1.0}), bad, scalar_prior(0, 1)),
                  std::invalid_argument);
  GaussianBelief wide;
  wide.mean = Vector::Zero(2);
  wide.cov = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(kf_filter(to_observations({1.0}), model, wide),
                  std::invalid_argument);
}

TEST_CASE("rts at T=1 equals filtered") {
  auto model = scalar_model(1.0, 0.0, 0.3, 1.0, 1.0);
  auto out = rts_smooth(kf_filter(to_observations({0.7}), model, scalar_prior(0, 1)),
                        model);
  CHECK(out.smoothed[0].mean == out.filtered[0].mean);
  CHECK(out.smoothed[0].cov == out.filtered[0].cov);
}

TEST_CASE("rts T=2 matches conditional Gaussian of state 1 given both obs") {
  const double a = 0.8, c = 0.0, w = 0.5, h = 1.0, v = 0.6;
  const double m0 = 0.1, p0 = 1.0;
  std::vector<double> y = {0.9, -0.2};

  auto out = rts_smooth(
      kf_filter(to_observations(y), scalar_model(a, c, w, h, v), scalar_prior(m0, p0)),
      scalar_model(a, c, w, h, v));

  // Oracle: joint Gaussian of (x1, y1, y2), then condition x1 on (y1, y2).
  double mx1 = a * m0 + c;
  double px1 = a * a * p0 + w;
  double mx2 = a * mx1 + c;
  double px2 = a * a * px1 + w;
  double cx12 = a * px1;
  Vector mu(3);
  mu << mx1, h * mx1, h * mx2;
  Matrix sig(3, 3);
  sig << px1, h * px1, h * cx12,
         h * px1, h * h * px1 + v, h * h * cx12,
         h * cx12, h * h * cx12, h * h * px2 + v;
  Vector obs(2);
  obs << y[0], y[1];
  Matrix syy = sig.block(1, 1, 2, 2);
  Vector sxy = sig.block(0, 1, 1, 2).transpose();
  Vector delta = syy.llt().solve(obs - mu.segment(1, 2));
  double cond_mean = mu(0) + sxy.dot(delta);
  double cond_var = sig(0, 0) - sxy.dot(syy.llt().solve(sxy));

  CHECK(out.smoothed[0].mean(0) == Catch::Approx(cond_mean).margin(1e-10));
  CHECK(out.smoothed[0].cov(0, 0) == Catch::Approx(cond_var).margin(1e-10));
}

TEST_CASE("zero state noise: smoothed means lie on one deterministic trajectory") {
  const double a = 1.05, c = 0.2;
  auto model = scalar_model(a, c, 0.0, 1.0, 0.4);
  std::vector<double> y = {1.0, 1.5, 1.2, 2.0, 2.4};
  auto out = rts_smooth(kf_filter(to_observations(y), model, scalar_prior(0.5, 2.0)),
                        model);
  for (std::size_t t = 0; t + 1 < out.smoothed.size(); ++t) {
    CHECK(out.smoothed[t + 1].mean(0) ==
          Catch::Approx(a * out.smoothed[t].mean(0) + c).margin(1e-8));
  }
}

TEST_CASE("ukf on a linear model matches kf over 20 steps") {
  Matrix a(2, 2);
  a << 0.9, 0.1, -0.05, 0.95;
  Vector c(2);
  c << 0.1, -0.2;
  Matrix w = Matrix::Identity(2, 2) * 0.3;
  Matrix h(1, 2);
  h << 1.0, 0.5;
  Matrix v = Matrix::Constant(1, 1, 0.8);

  LinearStateSpace lin{a, c, w, h, v};
  NonlinearStateSpace nl;
  nl.transition_fn = [&](const Vector& x) { return Vector(a * x + c); };
  nl.obs_fn = [&](const Vector& x) { return Vector(h * x); };
  nl.state_noise = w;
  nl.obs_noise = v;

  Rng rng(42);
  std::vector<Observation> series;
  for (int t = 0; t < 20; ++t) {
    Vector y(1);
    y(0) = rng.normal(0.5 * t * 0.1, 1.0);
    series.emplace_back(y);
  }
  GaussianBelief prior;
  prior.mean = Vector::Zero(2);
  prior.cov = Matrix::Identity(2, 2);

  auto kf = kf_filter(series, lin, prior);
  auto ukf = ukf_filter(series, nl, prior);
  for (std::size_t t = 0; t < series.size(); ++t) {
    CHECK((kf.filtered[t].mean - ukf.filtered[t].mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((kf.filtered[t].cov - ukf.filtered[t].cov).cwiseAbs().maxCoeff() < 1e-7);
  }
  CHECK(ukf.loglik == Catch::Approx(kf.loglik).margin(1e-6));
}

TEST_CASE("ukf mean weights sum to one across tuning settings") {
  GaussianBelief b;
  b.mean = Vector::Zero(3);
  b.cov = Matrix::Identity(3, 3);
  for (double alpha : {1e-3, 0.5, 1.0}) {
    for (double kappa : {0.0, 1.0, 3.0}) {
      UkfSettings cfg{alpha, 2.0, kappa};
      auto sp = detail::draw_sigma_points(b, cfg);
      CHECK(sp.wm.sum() == Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("unscented moment oracle: E[x^2] = 1 for prior N(0,1)") {
  GaussianBelief b;
  b.mean = Vector::Zero(1);
  b.cov = Matrix::Identity(1, 1);
  auto sp = detail::draw_sigma_points(b, UkfSettings{});
  double est = 0.0;
  for (std::size_t i = 0; i < sp.points.size(); ++i)
    est += sp.wm(i) * sp.points[i](0) * sp.points[i](0);
  CHECK(est == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("covariances stay symmetric PSD through filter and smoother") {
  auto model = scalar_model(0.9, 0.1, 0.3, 1.0, 0.5);
  Rng rng(7);
  std::vector<double> y;
  for (int t = 0; t < 30; ++t) y.push_back(rng.normal(0.0, 2.0));
  auto out = rts_smooth(kf_filter(to_observations(y), model, scalar_prior(0, 1)), model);
  auto check_beliefs = [](const std::vector<GaussianBelief>& bs) {
    for (const auto& b : bs) {
      CHECK((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(min_eigenvalue(b.cov) >= -1e-9);
    }
  };
  check_beliefs(out.predicted);
  check_beliefs(out.filtered);
  check_beliefs(out.smoothed);
}

TEST_CASE("filtering is deterministic") {
  auto model = scalar_model(0.9, 0.1, 0.3, 1.0, 0.5);
  std::vector<double> y = {1.0, 0.2, -0.5, 0.9};
  auto a = kf_filter(to_observations(y), model, scalar_prior(0, 1));
  auto b = kf_filter(to_observations(y), model, scalar_prior(0, 1));
  REQUIRE(a.loglik == b.loglik);
  for (std::size_t t = 0; t < y.size(); ++t) {
    REQUIRE(a.filtered[t].mean == b.filtered[t].mean);
    REQUIRE(a.filtered[t].cov == b.filtered[t].cov);
  }
}
