#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "structest/common.hpp"

namespace structest {

// Mean/covariance belief about a latent state at one time step.
struct GaussianBelief {
  Vector mean;
  Matrix cov;

  int dim() const { return static_cast<int>(mean.size()); }

  // Symmetrize and clip tiny negative eigenvalues; applied after every
  // filter/smoother update so downstream Cholesky factorizations stay viable.
  void repair() {
    cov = symmetrize(cov);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.eigenvalues().minCoeff() < 0.0) {
      Vector ev = es.eigenvalues().cwiseMax(0.0);
      cov = symmetrize(es.eigenvectors() * ev.asDiagonal() *
                       es.eigenvectors().transpose());
    }
  }
};

// x_t = A x_{t-1} + c + w,  w ~ N(0, W)
// y_t = H x_t + v,          v ~ N(0, V)
struct LinearStateSpace {
  Matrix transition;   // A
  Vector drift;        // c
  Matrix state_noise;  // W
  Matrix obs_map;      // H
  Matrix obs_noise;    // V

  int state_dim() const { return static_cast<int>(transition.rows()); }
  int obs_dim() const { return static_cast<int>(obs_map.rows()); }

  void validate() const {
    require(transition.rows() == transition.cols(), "transition must be square");
    require(drift.size() == transition.rows(), "drift dim mismatch");
    require(state_noise.rows() == transition.rows() &&
                state_noise.cols() == transition.rows(),
            "state_noise dim mismatch");
    require(obs_map.cols() == transition.rows(), "obs_map dim mismatch");
    require(obs_noise.rows() == obs_map.rows() && obs_noise.cols() == obs_map.rows(),
            "obs_noise dim mismatch");
    require(is_psd(state_noise), "state_noise must be PSD");
    require(is_psd(obs_noise), "obs_noise must be PSD");
  }
};

// x_t = F(x_{t-1}) + w, y_t = H(x_t) + v with deterministic F, H.
struct NonlinearStateSpace {
  std::function<Vector(const Vector&)> transition_fn;
  std::function<Vector(const Vector&)> obs_fn;
  Matrix state_noise;
  Matrix obs_noise;
};

// An observation may be absent (predict-only step, e.g. ragged auction
// traces); individual components cannot be missing separately.
using Observation = std::optional<Vector>;

struct FilterOutput {
  std::vector<GaussianBelief> predicted;
  std::vector<GaussianBelief> filtered;
  std::vector<GaussianBelief> smoothed;  // empty until rts_smooth
  // cross_cov[t] = cov(x_t | y_1..t(filtered), x_{t+1} predicted); used by the
  // sigma-point smoother. The final slot is unused.
  std::vector<Matrix> cross_cov;
  double loglik = 0.0;
};

inline FilterOutput kf_filter(const std::vector<Observation>& series,
                              const LinearStateSpace& model,
                              const GaussianBelief& prior) {
  model.validate();
  require(!series.empty(), "kf_filter: series must be nonempty");
  require(prior.dim() == model.state_dim(), "kf_filter: prior dim mismatch");

  FilterOutput out;
  out.predicted.reserve(series.size());
  out.filtered.reserve(series.size());

  GaussianBelief current = prior;
  for (const auto& obs : series) {
    GaussianBelief pred;
    pred.mean = model.transition * current.mean + model.drift;
    pred.cov = model.transition * current.cov * model.transition.transpose() +
               model.state_noise;
    pred.repair();
    if (!out.filtered.empty())
      out.cross_cov.push_back(out.filtered.back().cov * model.transition.transpose());
    out.predicted.push_back(pred);

    if (obs.has_value()) {
      require(obs->size() == model.obs_dim(), "kf_filter: observation dim mismatch");
      Vector yhat = model.obs_map * pred.mean;
      Matrix s = model.obs_map * pred.cov * model.obs_map.transpose() + model.obs_noise;
      s = symmetrize(s);
      out.loglik += mvn_logpdf(*obs, yhat, s);
      Matrix gain = s.llt().solve(model.obs_map * pred.cov).transpose();
      GaussianBelief post;
      post.mean = pred.mean + gain * (*obs - yhat);
      // Joseph form keeps the covariance symmetric PSD under roundoff.
      Matrix imkh = Matrix::Identity(pred.dim(), pred.dim()) - gain * model.obs_map;
      post.cov = imkh * pred.cov * imkh.transpose() +
                 gain * model.obs_noise * gain.transpose();
      post.repair();
      out.filtered.push_back(post);
      current = post;
    } else {
      out.filtered.push_back(pred);
      current = pred;
    }
  }
  return out;
}

// Backward recursion theta+_t = theta_t + C_t (theta+_{t+1} - theta-_{t+1})
// with C_t = P_t A' (P-_{t+1})^{-1}; last smoothed equals last filtered.
inline FilterOutput rts_smooth(const FilterOutput& fit, const LinearStateSpace& model) {
  require(!fit.filtered.empty(), "rts_smooth: run kf_filter first");
  FilterOutput out = fit;
  const auto t_end = fit.filtered.size();
  out.smoothed.assign(t_end, GaussianBelief{});
  out.smoothed[t_end - 1] = fit.filtered[t_end - 1];

  for (std::size_t t = t_end - 1; t-- > 0;) {
    const GaussianBelief& f = fit.filtered[t];
    const GaussianBelief& pred_next = fit.predicted[t + 1];
    Matrix pred_cov = pred_next.cov;
    Eigen::LLT<Matrix> llt(symmetrize(pred_cov));
    if (llt.info() != Eigen::Success) {
      pred_cov += 1e-9 * Matrix::Identity(pred_cov.rows(), pred_cov.cols());
      llt.compute(symmetrize(pred_cov));
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("rts_smooth: singular predicted covariance");
    }
    Matrix c = llt.solve(model.transition * f.cov).transpose();
    GaussianBelief s;
    s.mean = f.mean + c * (out.smoothed[t + 1].mean - pred_next.mean);
    s.cov = f.cov + c * (out.smoothed[t + 1].cov - pred_next.cov) * c.transpose();
    s.repair();
    out.smoothed[t] = s;
  }
  return out;
}

// UKF tuning constants. The scaling lambda = alpha^2 (L + kappa) - L and the
// weight recipe follow the unscented-transform convention; beta_u encodes
// prior kurtosis (2 is exact for Gaussians).
struct UkfSettings {
  double alpha = 1e-3;
  double beta_u = 2.0;
  double kappa = 0.0;
};

namespace detail {

struct SigmaPoints {
  std::vector<Vector> points;
  Vector wm;  // mean weights
  Vector wc;  // covariance weights
};

inline SigmaPoints draw_sigma_points(const GaussianBelief& belief,
                                     const UkfSettings& cfg) {
  const int l = belief.dim();
  require(l >= 1, "ukf: state dim must be >= 1");
  const double lambda = cfg.alpha * cfg.alpha * (l + cfg.kappa) - l;
  require(l + lambda > 0.0, "ukf: L + lambda must be positive");

  SigmaPoints sp;
  sp.points.resize(2 * l + 1);
  sp.wm.resize(2 * l + 1);
  sp.wc.resize(2 * l + 1);
  sp.wm(0) = lambda / (l + lambda);
  sp.wc(0) = lambda / (l + lambda) + (1.0 - cfg.alpha * cfg.alpha + cfg.beta_u);
  for (int i = 1; i <= 2 * l; ++i) {
    sp.wm(i) = 0.5 / (l + lambda);
    sp.wc(i) = sp.wm(i);
  }

  Matrix scaled = (l + lambda) * belief.cov;
  Matrix root = cholesky_with_jitter(scaled);
  sp.points[0] = belief.mean;
  for (int i = 0; i < l; ++i) {
    sp.points[1 + i] = belief.mean + root.col(i);
    sp.points[1 + l + i] = belief.mean - root.col(i);
  }
  return sp;
}

}  // namespace detail

// Unscented filter. The paper's recipe hard-codes identity process noise; this
// takes configurable state/observation covariances so the joint diffusion
// model can supply its full SUR covariance.
inline FilterOutput ukf_filter(const std::vector<Observation>& series,
                               const NonlinearStateSpace& model,
                               const GaussianBelief& prior,
                               const UkfSettings& cfg = {}) {
  require(!series.empty(), "ukf_filter: series must be nonempty");
  require(prior.dim() >= 1, "ukf_filter: state dim must be >= 1");
  require(is_psd(model.state_noise), "ukf_filter: state_noise must be PSD");
  require(is_psd(model.obs_noise), "ukf_filter: obs_noise must be PSD");

  FilterOutput out;
  out.predicted.reserve(series.size());
  out.filtered.reserve(series.size());

  GaussianBelief current = prior;
  const int obs_dim = static_cast<int>(model.obs_noise.rows());

  for (const auto& obs : series) {
    auto sp = detail::draw_sigma_points(current, cfg);
    const auto n_sigma = sp.points.size();

    std::vector<Vector> propagated(n_sigma);
    for (std::size_t i = 0; i < n_sigma; ++i)
      propagated[i] = model.transition_fn(sp.points[i]);

    GaussianBelief pred;
    pred.mean = Vector::Zero(current.dim());
    for (std::size_t i = 0; i < n_sigma; ++i) pred.mean += sp.wm(i) * propagated[i];
    pred.cov = model.state_noise;
    for (std::size_t i = 0; i < n_sigma; ++i) {
      Vector d = propagated[i] - pred.mean;
      pred.cov += sp.wc(i) * (d * d.transpose());
    }
    pred.repair();
    if (!out.filtered.empty()) {
      Matrix cross = Matrix::Zero(current.dim(), current.dim());
      for (std::size_t i = 0; i < n_sigma; ++i)
        cross += sp.wc(i) * (sp.points[i] - current.mean) *
                 (propagated[i] - pred.mean).transpose();
      out.cross_cov.push_back(cross);
    }
    out.predicted.push_back(pred);

    if (!obs.has_value()) {
      out.filtered.push_back(pred);
      current = pred;
      continue;
    }
    require(obs->size() == obs_dim, "ukf_filter: observation dim mismatch");

    // Redraw sigma points around the prediction before the measurement pass.
    auto sp2 = detail::draw_sigma_points(pred, cfg);
    std::vector<Vector> obs_pts(sp2.points.size());
    for (std::size_t i = 0; i < sp2.points.size(); ++i)
      obs_pts[i] = model.obs_fn(sp2.points[i]);

    Vector yhat = Vector::Zero(obs_dim);
    for (std::size_t i = 0; i < obs_pts.size(); ++i) yhat += sp2.wm(i) * obs_pts[i];
    Matrix pyy = model.obs_noise;
    Matrix pxy = Matrix::Zero(current.dim(), obs_dim);
    for (std::size_t i = 0; i < obs_pts.size(); ++i) {
      Vector dy = obs_pts[i] - yhat;
      Vector dx = sp2.points[i] - pred.mean;
      pyy += sp2.wc(i) * (dy * dy.transpose());
      pxy += sp2.wc(i) * (dx * dy.transpose());
    }
    pyy = symmetrize(pyy);

    out.loglik += mvn_logpdf(*obs, yhat, pyy);
    Matrix gain = pyy.llt().solve(pxy.transpose()).transpose();
    GaussianBelief post;
    post.mean = pred.mean + gain * (*obs - yhat);
    post.cov = pred.cov - gain * pyy * gain.transpose();
    post.repair();
    out.filtered.push_back(post);
    current = post;
  }
  return out;
}

// Smoother that consumes the stored cross-covariances instead of a linear
// transition matrix; on a linear model it coincides with rts_smooth. This is
// the backward pass used after ukf_filter.
inline FilterOutput sigma_point_smooth(const FilterOutput& fit) {
  require(!fit.filtered.empty(), "sigma_point_smooth: run a filter first");
  require(fit.cross_cov.size() + 1 == fit.filtered.size(),
          "sigma_point_smooth: missing cross covariances");
  FilterOutput out = fit;
  const auto t_end = fit.filtered.size();
  out.smoothed.assign(t_end, GaussianBelief{});
  out.smoothed[t_end - 1] = fit.filtered[t_end - 1];
  for (std::size_t t = t_end - 1; t-- > 0;) {
    const GaussianBelief& pred_next = fit.predicted[t + 1];
    Matrix pred_cov = symmetrize(pred_next.cov);
    Eigen::LLT<Matrix> llt(pred_cov);
    if (llt.info() != Eigen::Success) {
      pred_cov += 1e-9 * Matrix::Identity(pred_cov.rows(), pred_cov.cols());
      llt.compute(pred_cov);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("sigma_point_smooth: singular predicted covariance");
    }
    Matrix gain = llt.solve(fit.cross_cov[t].transpose()).transpose();
    GaussianBelief s;
    s.mean = fit.filtered[t].mean + gain * (out.smoothed[t + 1].mean - pred_next.mean);
    s.cov = fit.filtered[t].cov +
            gain * (out.smoothed[t + 1].cov - pred_next.cov) * gain.transpose();
    s.repair();
    out.smoothed[t] = s;
  }
  return out;
}

inline std::vector<Observation> to_observations(const std::vector<double>& scalars) {
  std::vector<Observation> obs;
  obs.reserve(scalars.size());
  for (double y : scalars) {
    Vector v(1);
    v(0) = y;
    obs.emplace_back(v);
  }
  return obs;
}

}  // namespace structest
