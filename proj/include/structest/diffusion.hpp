#pragma once

#include <utility>
#include <vector>

#include "structest/kalman.hpp"
#include "structest/optim.hpp"
#include "structest/rng.hpp"

namespace structest {

// Two-segment (influential/imitator) diffusion rates for one category.
struct SegmentedDiffusionParams {
  double p_inf = 0.0;
  double q_inf = 0.0;
  double p_imm = 0.0;
  double q_imm = 0.0;
  double m_inf = 1.0;
  double m_imm = 1.0;
  double w = 0.5;      // imitators' weight on the influential pool
  double theta = 0.5;  // influential share in the observation mix

  void validate() const {
    require(p_inf >= 0 && q_inf >= 0 && p_imm >= 0 && q_imm >= 0,
            "diffusion: rates must be non-negative");
    require(m_inf > 0 && m_imm > 0, "diffusion: market sizes must be positive");
    require(w > 0 && w < 1 && theta > 0 && theta < 1,
            "diffusion: w and theta must lie in (0,1)");
  }
};

// Joint model across categories: cumulative influential/imitator states per
// category, SUR covariance across all 2J state equations, per-category
// observation noise, and the popularity hierarchy that shrinks the fixed
// parameters.
struct JointDiffusionModel {
  std::vector<SegmentedDiffusionParams> params;   // per category
  Matrix state_noise_factor;                      // 2J x 2J lower triangular
  Vector obs_noise;                               // V_j per category
  Matrix pop;                                     // J x q popularity covariates

  int categories() const { return static_cast<int>(params.size()); }
  int state_dim() const { return 2 * categories(); }

  Matrix state_noise() const {
    return state_noise_factor * state_noise_factor.transpose();
  }

  void validate() const {
    const int j = categories();
    require(j >= 1, "diffusion: at least one category");
    for (const auto& p : params) p.validate();
    require(state_noise_factor.rows() == 2 * j && state_noise_factor.cols() == 2 * j,
            "diffusion: state noise factor dim mismatch");
    require(obs_noise.size() == j, "diffusion: obs noise dim mismatch");
    require(obs_noise.minCoeff() > 0, "diffusion: obs noise must be positive");
  }

  // State layout: [c_inf_1, c_imm_1, c_inf_2, c_imm_2, ...].
  Vector transition(const Vector& state) const {
    Vector next(state.size());
    for (int j = 0; j < categories(); ++j) {
      const auto& ph = params[j];
      double ci = std::clamp(state(2 * j), 0.0, ph.m_inf);
      double cm = std::clamp(state(2 * j + 1), 0.0, ph.m_imm);
      double hazard_inf = ph.p_inf + ph.q_inf * (ci / ph.m_inf);
      double hazard_imm =
          ph.p_imm + ph.q_imm * (ph.w * (ci / ph.m_inf) + (1.0 - ph.w) * (cm / ph.m_imm));
      next(2 * j) = std::clamp(ci + hazard_inf * (ph.m_inf - ci), 0.0, ph.m_inf);
      next(2 * j + 1) = std::clamp(cm + hazard_imm * (ph.m_imm - cm), 0.0, ph.m_imm);
    }
    return next;
  }

  Vector observe(const Vector& state) const {
    Vector y(categories());
    for (int j = 0; j < categories(); ++j) {
      const auto& ph = params[j];
      y(j) = ph.theta * state(2 * j) + (1.0 - ph.theta) * state(2 * j + 1);
    }
    return y;
  }

  NonlinearStateSpace state_space() const {
    NonlinearStateSpace ss;
    auto self = *this;
    ss.transition_fn = [self](const Vector& x) { return self.transition(x); };
    ss.obs_fn = [self](const Vector& x) { return self.observe(x); };
    ss.state_noise = state_noise();
    ss.obs_noise = obs_noise.asDiagonal();
    return ss;
  }
};

struct DiffusionSim {
  Matrix y;      // J x T observed cumulative adopters
  Matrix c_inf;  // latent truth
  Matrix c_imm;
};

inline DiffusionSim simulate_diffusion(const JointDiffusionModel& model, int t_len,
                                       std::uint64_t seed, bool noiseless = false) {
  model.validate();
  require(t_len >= 1, "simulate_diffusion: T >= 1");
  const int j_n = model.categories();
  Rng rng(seed);
  Matrix chol = noiseless ? Matrix() : model.state_noise_factor;

  DiffusionSim sim;
  sim.y.resize(j_n, t_len);
  sim.c_inf.resize(j_n, t_len);
  sim.c_imm.resize(j_n, t_len);

  Vector state = Vector::Zero(2 * j_n);
  for (int t = 0; t < t_len; ++t) {
    Vector next = model.transition(state);
    if (!noiseless) next += chol * rng.normal_vector(2 * j_n);
    for (int j = 0; j < j_n; ++j) {
      next(2 * j) = std::clamp(next(2 * j), 0.0, model.params[j].m_inf);
      next(2 * j + 1) = std::clamp(next(2 * j + 1), 0.0, model.params[j].m_imm);
    }
    state = next;
    Vector y = model.observe(state);
    for (int j = 0; j < j_n; ++j) {
      if (!noiseless) y(j) += rng.normal(0.0, std::sqrt(model.obs_noise(j)));
      sim.y(j, t) = y(j);
      sim.c_inf(j, t) = state(2 * j);
      sim.c_imm(j, t) = state(2 * j + 1);
    }
  }
  return sim;
}

struct DiffusionFit {
  JointDiffusionModel map_params;
  FilterOutput filter;
  Matrix forecasts;  // one-step-ahead yhat, J x T
  double mad = 0.0;
  double mse = 0.0;
  Matrix imitator_path;  // filtered c_imm, J x T
  double objective = kNegInf;
  std::vector<double> objective_trace;
};

namespace detail {

// Parameter packing for the MAP search. Per category, the transformed block
// [log(p_inf+e), log(q_inf+e), log(p_imm+e), log(q_imm+e), log m_inf,
//  log m_imm, logit w, logit theta]; then the lower triangle of the SUR
// factor (log diagonal), then log V_j. At J = 10 this is the 300-parameter
// layout of the full model (80 + 210 + 10).
constexpr double kRateShift = 1e-8;

inline int diffusion_param_count(int j_n) {
  int s = 2 * j_n;
  return 8 * j_n + s * (s + 1) / 2 + j_n;
}

inline Vector pack_diffusion(const JointDiffusionModel& m) {
  const int j_n = m.categories();
  Vector v(diffusion_param_count(j_n));
  int at = 0;
  for (const auto& p : m.params) {
    v(at++) = std::log(p.p_inf + kRateShift);
    v(at++) = std::log(p.q_inf + kRateShift);
    v(at++) = std::log(p.p_imm + kRateShift);
    v(at++) = std::log(p.q_imm + kRateShift);
    v(at++) = std::log(p.m_inf);
    v(at++) = std::log(p.m_imm);
    v(at++) = std::log(p.w / (1.0 - p.w));
    v(at++) = std::log(p.theta / (1.0 - p.theta));
  }
  const int s = 2 * j_n;
  for (int r = 0; r < s; ++r)
    for (int c = 0; c <= r; ++c)
      v(at++) = r == c ? std::log(std::max(m.state_noise_factor(r, c), 1e-12))
                       : m.state_noise_factor(r, c);
  for (int j = 0; j < j_n; ++j) v(at++) = std::log(m.obs_noise(j));
  return v;
}

inline JointDiffusionModel unpack_diffusion(const Vector& v, int j_n, const Matrix& pop) {
  JointDiffusionModel m;
  m.pop = pop;
  int at = 0;
  for (int j = 0; j < j_n; ++j) {
    SegmentedDiffusionParams p;
    p.p_inf = std::max(0.0, std::exp(v(at++)) - kRateShift);
    p.q_inf = std::max(0.0, std::exp(v(at++)) - kRateShift);
    p.p_imm = std::max(0.0, std::exp(v(at++)) - kRateShift);
    p.q_imm = std::max(0.0, std::exp(v(at++)) - kRateShift);
    p.m_inf = std::exp(v(at++));
    p.m_imm = std::exp(v(at++));
    p.w = 1.0 / (1.0 + std::exp(-v(at++)));
    p.theta = 1.0 / (1.0 + std::exp(-v(at++)));
    m.params.push_back(p);
  }
  const int s = 2 * j_n;
  m.state_noise_factor = Matrix::Zero(s, s);
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c <= r; ++c) {
      m.state_noise_factor(r, c) = r == c ? std::exp(v(at)) : v(at);
      ++at;
    }
  }
  m.obs_noise.resize(j_n);
  for (int j = 0; j < j_n; ++j) m.obs_noise(j) = std::exp(v(at++));
  return m;
}

// Popularity hierarchy: regress each transformed fixed-parameter coordinate on
// [1, Pop_j] and score the residuals as N(0, sigma^2) with a variance floor.
// With a single category the residuals vanish and the prior is a constant.
inline double hierarchy_log_prior(const Vector& packed, int j_n, const Matrix& pop) {
  Matrix phi(j_n, 8);
  for (int j = 0; j < j_n; ++j)
    for (int c = 0; c < 8; ++c) phi(j, c) = packed(8 * j + c);

  Matrix design(j_n, 1 + pop.cols());
  design.col(0).setOnes();
  if (pop.cols() > 0) design.rightCols(pop.cols()) = pop;

  Matrix gram = design.transpose() * design +
                1e-9 * Matrix::Identity(design.cols(), design.cols());
  double logp = 0.0;
  for (int c = 0; c < 8; ++c) {
    Vector coef = gram.llt().solve(design.transpose() * phi.col(c));
    Vector resid = phi.col(c) - design * coef;
    double sigma2 = std::max(resid.squaredNorm() / j_n, 1e-4);
    for (int j = 0; j < j_n; ++j) logp += normal_logpdf(resid(j), 0.0, sigma2);
  }
  return logp;
}

}  // namespace detail

// Unit-spread sigma points for this model: the states live against clamp
// boundaries, where the near-zero-spread default produces huge negative
// center weights that amplify the kink.
inline UkfSettings diffusion_ukf_defaults() { return UkfSettings{1.0, 2.0, 0.0}; }

struct DiffusionFitConfig {
  MCEMConfig mcem{1e-6, 15, 0};
  GAConfig ga{60, 120, 0.7, 0.25, 2, 0, 1};
  UkfSettings ukf = diffusion_ukf_defaults();
  // Optional explicit start; otherwise a data-driven heuristic start is built.
  std::vector<SegmentedDiffusionParams> init_params;
};

// Heuristic initialization from the observed series: market sizes from the
// plateau, mid-range adoption rates, small influential share.
inline JointDiffusionModel default_diffusion_init(const Matrix& y) {
  const int j_n = static_cast<int>(y.rows());
  JointDiffusionModel m;
  const int s = 2 * j_n;
  m.state_noise_factor = Matrix::Zero(s, s);
  m.obs_noise.resize(j_n);
  for (int j = 0; j < j_n; ++j) {
    double peak = std::max(y.row(j).maxCoeff(), 1.0);
    SegmentedDiffusionParams p;
    p.p_inf = 0.05;
    p.q_inf = 0.05;
    p.p_imm = 0.1;
    p.q_imm = 0.1;
    p.m_inf = 0.2 * peak;
    p.m_imm = 1.1 * peak;
    p.w = 0.5;
    p.theta = 0.1;
    m.params.push_back(p);

    double dvar = 0.0;
    for (int t = 1; t < y.cols(); ++t) {
      double d = y(j, t) - y(j, t - 1);
      dvar += d * d;
    }
    dvar = std::max(dvar / std::max(1, static_cast<int>(y.cols()) - 1), 1e-2);
    m.state_noise_factor(2 * j, 2 * j) = std::sqrt(dvar) * 0.5;
    m.state_noise_factor(2 * j + 1, 2 * j + 1) = std::sqrt(dvar) * 0.5;
    m.obs_noise(j) = dvar;
  }
  m.pop = Matrix::Zero(j_n, 0);
  return m;
}

// Evaluate a model on a series without optimizing: UKF pass, one-step-ahead
// forecasts, MAD/MSE, and the filtered imitator path.
inline DiffusionFit evaluate_diffusion(const JointDiffusionModel& model, const Matrix& y,
                                       const UkfSettings& ukf = diffusion_ukf_defaults()) {
  model.validate();
  const int j_n = model.categories();
  require(y.rows() == j_n, "diffusion: series/category mismatch");
  const int t_len = static_cast<int>(y.cols());

  std::vector<Observation> obs;
  obs.reserve(t_len);
  for (int t = 0; t < t_len; ++t) obs.emplace_back(y.col(t));

  GaussianBelief prior;
  prior.mean = Vector::Zero(2 * j_n);
  prior.cov = Matrix::Identity(2 * j_n, 2 * j_n) * 1e-12;

  DiffusionFit fit;
  fit.map_params = model;
  fit.filter = ukf_filter(obs, model.state_space(), prior, ukf);

  fit.forecasts.resize(j_n, t_len);
  fit.imitator_path.resize(j_n, t_len);
  double abs_sum = 0.0, sq_sum = 0.0;
  for (int t = 0; t < t_len; ++t) {
    Vector yhat = model.observe(fit.filter.predicted[t].mean);
    for (int j = 0; j < j_n; ++j) {
      fit.forecasts(j, t) = yhat(j);
      double err = y(j, t) - yhat(j);
      abs_sum += std::abs(err);
      sq_sum += err * err;
      fit.imitator_path(j, t) = std::clamp(fit.filter.filtered[t].mean(2 * j + 1), 0.0,
                                           model.params[j].m_imm);
    }
  }
  fit.mad = abs_sum / (j_n * t_len);
  fit.mse = sq_sum / (j_n * t_len);
  fit.objective = fit.filter.loglik;
  return fit;
}

// MAP estimation: UKF expected log-likelihood inside a Monte Carlo EM loop
// with a genetic M-step, plus the popularity-hierarchy prior. A UKF failure
// on a candidate scores -inf so the search simply rejects it.
inline DiffusionFit fit_map(const Matrix& y, const Matrix& pop,
                            const DiffusionFitConfig& cfg = {}) {
  const int j_n = static_cast<int>(y.rows());
  require(j_n >= 1, "fit_map: need at least one category");
  require(y.cols() >= 10, "fit_map: need T >= 10 per category");
  require((y.array() >= 0).all(), "fit_map: adoption counts must be non-negative");
  require(pop.rows() == j_n || pop.size() == 0, "fit_map: pop covariate rows mismatch");

  JointDiffusionModel init = default_diffusion_init(y);
  if (!cfg.init_params.empty()) {
    require(static_cast<int>(cfg.init_params.size()) == j_n,
            "fit_map: init params size mismatch");
    init.params = cfg.init_params;
  }
  init.pop = pop.rows() == j_n ? pop : Matrix::Zero(j_n, 0);

  std::vector<Observation> obs;
  for (int t = 0; t < y.cols(); ++t) obs.emplace_back(y.col(t));
  GaussianBelief prior;
  prior.mean = Vector::Zero(2 * j_n);
  prior.cov = Matrix::Identity(2 * j_n, 2 * j_n) * 1e-12;

  const Matrix pop_used = init.pop;
  auto loglik_at = [&, obs, prior](const Vector& packed) -> double {
    JointDiffusionModel m = detail::unpack_diffusion(packed, j_n, pop_used);
    try {
      m.validate();
      double ll = ukf_filter(obs, m.state_space(), prior, cfg.ukf).loglik;
      if (!std::isfinite(ll)) return kNegInf;
      return ll + detail::hierarchy_log_prior(packed, j_n, pop_used);
    } catch (const std::exception&) {
      return kNegInf;
    }
  };

  const int dim = detail::diffusion_param_count(j_n);
  auto e_step = [&](const Vector&) { return Objective{loglik_at, dim}; };

  int m_step_round = 0;
  auto m_step = [&](const Objective& objective, const Vector& start) {
    GAConfig ga = cfg.ga;
    ga.seed = cfg.ga.seed + static_cast<std::uint64_t>(m_step_round++);
    // Initial population: current point times per-coordinate U(0.9, 1.1).
    Rng jitter(ga.seed ^ 0x5eedu);
    std::vector<Vector> population;
    population.push_back(start);
    for (int i = 1; i < ga.population; ++i) {
      Vector member = start;
      for (int d = 0; d < member.size(); ++d) member(d) *= jitter.uniform(0.9, 1.1);
      population.push_back(member);
    }
    auto res = genetic_optimize(objective, population, ga);
    return std::make_pair(res.x, res.value);
  };

  Vector start = detail::pack_diffusion(init);
  auto mcem = mcem_drive(e_step, m_step, cfg.mcem, start);

  JointDiffusionModel map_model = detail::unpack_diffusion(mcem.params, j_n, pop_used);
  DiffusionFit fit = evaluate_diffusion(map_model, y, cfg.ukf);
  fit.objective = loglik_at(mcem.params);
  fit.objective_trace = mcem.objective_trace;
  return fit;
}

inline std::pair<Matrix, std::pair<double, double>> forecast_errors(
    const DiffusionFit& fit, const Matrix& y) {
  require(y.rows() == fit.forecasts.rows() && y.cols() == fit.forecasts.cols(),
          "forecast_errors: fit was produced from a different series");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (int j = 0; j < y.rows(); ++j) {
    for (int t = 0; t < y.cols(); ++t) {
      double err = y(j, t) - fit.forecasts(j, t);
      abs_sum += std::abs(err);
      sq_sum += err * err;
    }
  }
  double n = static_cast<double>(y.size());
  return {fit.forecasts, {abs_sum / n, sq_sum / n}};
}

// Filtered imitator path, optionally aggregated to the end-of-week snapshot
// (the path is a cumulative quantity, so the last day of each week stands in
// for the week).
inline Matrix imitator_path(const DiffusionFit& fit, int days_per_week = 0) {
  const Matrix& daily = fit.imitator_path;
  if (days_per_week <= 1) return daily;
  const int weeks = static_cast<int>(daily.cols()) / days_per_week;
  Matrix weekly(daily.rows(), weeks);
  for (int w = 0; w < weeks; ++w)
    weekly.col(w) = daily.col((w + 1) * days_per_week - 1);
  return weekly;
}

}  // namespace structest
