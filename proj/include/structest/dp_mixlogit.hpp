#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <vector>

#include "structest/common.hpp"
#include "structest/rng.hpp"

namespace structest {

enum class ChoiceMode { multinomial, binomial };

// One cross-sectional unit: choice observations plus hierarchy covariates.
// Multinomial units carry a (J x d) design per observation with choice 0
// meaning the zero-utility outside option; binomial units carry one design
// row per day with success/trial counts.
struct UnitData {
  int id = 0;
  ChoiceMode mode = ChoiceMode::multinomial;

  std::vector<Matrix> designs;  // multinomial: T matrices, J x d
  std::vector<int> choices;     // multinomial: values in 0..J

  Matrix bin_design;            // binomial: T x d
  std::vector<int> successes;
  std::vector<int> trials;

  Vector z;  // hierarchy covariates

  int n_obs() const {
    return mode == ChoiceMode::multinomial ? static_cast<int>(choices.size())
                                           : static_cast<int>(successes.size());
  }

  int dim() const {
    return mode == ChoiceMode::multinomial
               ? (designs.empty() ? 0 : static_cast<int>(designs.front().cols()))
               : static_cast<int>(bin_design.cols());
  }

  void validate() const {
    require(n_obs() >= 1, "unit: needs at least one observation");
    if (mode == ChoiceMode::multinomial) {
      require(designs.size() == choices.size(), "unit: design/choice mismatch");
      for (std::size_t t = 0; t < designs.size(); ++t) {
        require(all_finite(designs[t]), "unit: non-finite design entries");
        require(choices[t] >= 0 && choices[t] <= designs[t].rows(),
                "unit: choice out of range");
      }
    } else {
      require(static_cast<int>(successes.size()) == bin_design.rows() &&
                  successes.size() == trials.size(),
              "unit: binomial layout mismatch");
      require(all_finite(bin_design), "unit: non-finite design entries");
      for (std::size_t t = 0; t < successes.size(); ++t)
        require(successes[t] >= 0 && successes[t] <= trials[t], "unit: bad counts");
    }
  }
};

struct AtomParams {
  Vector mu;
  Matrix sigma;
};

// Choice probabilities for J inside alternatives plus the fixed-zero outside
// option at index 0; max-shift keeps exp() in range for any finite utility.
inline Vector logit_probs(const Vector& inside_utilities) {
  require(all_finite(inside_utilities), "logit_probs: utilities must be finite");
  const int j_n = static_cast<int>(inside_utilities.size());
  Vector all(j_n + 1);
  all(0) = 0.0;
  all.tail(j_n) = inside_utilities;
  double m = all.maxCoeff();
  Vector e = (all.array() - m).exp();
  return e / e.sum();
}

inline double unit_loglik(const Vector& lambda, const UnitData& unit) {
  require(lambda.size() == unit.dim(), "unit_loglik: coefficient dim mismatch");
  double ll = 0.0;
  if (unit.mode == ChoiceMode::multinomial) {
    for (std::size_t t = 0; t < unit.designs.size(); ++t) {
      Vector v = unit.designs[t] * lambda;
      Vector probs = logit_probs(v);
      ll += std::log(std::max(probs(unit.choices[t]), 1e-300));
    }
  } else {
    for (std::size_t t = 0; t < unit.successes.size(); ++t) {
      double v = unit.bin_design.row(static_cast<int>(t)).dot(lambda);
      // log p = -softplus(-v), log(1-p) = -softplus(v)
      double sp_pos = v > 30 ? v : std::log1p(std::exp(v));
      double sp_neg = -v > 30 ? -v : std::log1p(std::exp(-v));
      double y = unit.successes[t], n = unit.trials[t];
      ll += std::lgamma(n + 1) - std::lgamma(y + 1) - std::lgamma(n - y + 1) -
            y * sp_neg - (n - y) * sp_pos;
    }
  }
  return ll;
}

inline Vector unit_loglik_grad(const Vector& lambda, const UnitData& unit) {
  Vector g = Vector::Zero(lambda.size());
  if (unit.mode == ChoiceMode::multinomial) {
    for (std::size_t t = 0; t < unit.designs.size(); ++t) {
      const Matrix& x = unit.designs[t];
      Vector probs = logit_probs(x * lambda);
      if (unit.choices[t] > 0) g += x.row(unit.choices[t] - 1).transpose();
      for (int j = 0; j < x.rows(); ++j) g -= probs(j + 1) * x.row(j).transpose();
    }
  } else {
    for (std::size_t t = 0; t < unit.successes.size(); ++t) {
      Vector x = unit.bin_design.row(static_cast<int>(t)).transpose();
      double v = x.dot(lambda);
      double p = 1.0 / (1.0 + std::exp(-v));
      g += (unit.successes[t] - unit.trials[t] * p) * x;
    }
  }
  return g;
}

// Fractional blend of the unit likelihood with a scaled pooled likelihood,
// used to stabilize per-unit curvature estimates.
inline double fractional_loglik(const Vector& lambda, const UnitData& unit,
                                const std::function<double(const Vector&)>& pooled,
                                double w, double n_i, double n_total) {
  require(w >= 0.0 && w < 1.0, "fractional_loglik: w in [0,1)");
  double li = unit_loglik(lambda, unit);
  if (w == 0.0) return li;
  double beta = n_i / n_total;
  return (1.0 - w) * li + w * beta * pooled(lambda);
}

// Truncated stick-breaking weights; the unbroken remainder is folded into the
// final bucket so the weights sum to one exactly.
inline Vector stick_breaking(double alpha_d, int k_trunc, Rng& rng) {
  require(k_trunc >= 1, "stick_breaking: K >= 1");
  require(alpha_d > 0.0, "stick_breaking: alpha > 0");
  Vector pi(k_trunc);
  double remaining = 1.0;
  for (int k = 0; k + 1 < k_trunc; ++k) {
    double b = rng.beta(1.0, alpha_d);
    pi(k) = b * remaining;
    remaining *= (1.0 - b);
  }
  pi(k_trunc - 1) = remaining;
  return pi;
}

// Per-unit membership probabilities over atoms: pi_k N(Lambda_i - Delta z_i |
// mu_k, Sigma_k), renormalized in log space (never a uniform fallback).
inline Matrix gibbs_indicator_probs(const std::vector<Vector>& lambdas,
                                    const std::vector<AtomParams>& atoms,
                                    const Vector& pi, const Matrix& delta,
                                    const std::vector<Vector>& zs) {
  require(!atoms.empty(), "gibbs_indicators: atoms must be nonempty");
  require(pi.size() == static_cast<int>(atoms.size()),
          "gibbs_indicators: pi/atom mismatch");
  const int k_n = static_cast<int>(atoms.size());
  Matrix probs(static_cast<int>(lambdas.size()), k_n);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    Vector resid = lambdas[i];
    if (delta.size() > 0 && zs[i].size() > 0) resid -= delta * zs[i];
    Vector logp(k_n);
    for (int k = 0; k < k_n; ++k)
      logp(k) = std::log(std::max(pi(k), 1e-300)) +
                mvn_logpdf(resid, atoms[k].mu, atoms[k].sigma);
    double lse = log_sum_exp(logp);
    probs.row(static_cast<int>(i)) = (logp.array() - lse).exp().transpose();
  }
  return probs;
}

inline std::vector<int> gibbs_indicators(const std::vector<Vector>& lambdas,
                                         const std::vector<AtomParams>& atoms,
                                         const Vector& pi, const Matrix& delta,
                                         const std::vector<Vector>& zs, Rng& rng) {
  Matrix probs = gibbs_indicator_probs(lambdas, atoms, pi, delta, zs);
  std::vector<int> ind(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    ind[i] = rng.categorical(probs.row(static_cast<int>(i)).transpose());
  return ind;
}

struct DpBaseHypers {
  double a = 1.0;      // prior precision on atom means
  double nu = 10.0;    // IW degrees of freedom
  double vtheta = 1.0;  // IW scale multiplier
};

// Conjugate draw for one atom from grouped residuals (Lambda_i - Delta z_i);
// an empty group draws from the base measure G0.
inline AtomParams draw_atom(const std::vector<Vector>& residuals, int dim,
                            const DpBaseHypers& hypers, Rng& rng) {
  require(hypers.nu > dim - 1, "draw_atom: IW degrees of freedom too small");
  const double a = hypers.a;
  Matrix prior_scale = hypers.nu * hypers.vtheta * Matrix::Identity(dim, dim);

  if (residuals.empty()) {
    AtomParams atom;
    atom.sigma = rng.inverse_wishart(hypers.nu, prior_scale);
    atom.mu = rng.mvn(Vector::Zero(dim), atom.sigma / a);
    return atom;
  }

  const double n = static_cast<double>(residuals.size());
  Vector mean = Vector::Zero(dim);
  for (const auto& r : residuals) mean += r;
  mean /= n;
  Vector mu_tilde = (n * mean) / (n + a);  // prior mean is zero

  Matrix scatter = Matrix::Zero(dim, dim);
  for (const auto& r : residuals) {
    Vector d = r - mu_tilde;
    scatter += d * d.transpose();
  }
  scatter += a * (mu_tilde * mu_tilde.transpose());

  AtomParams atom;
  atom.sigma = rng.inverse_wishart(hypers.nu + n, prior_scale + scatter);
  atom.mu = rng.mvn(mu_tilde, atom.sigma / (n + a));
  return atom;
}

namespace detail {

inline double log_multi_gamma(double x, int d) {
  double v = 0.25 * d * (d - 1) * std::log(M_PI);
  for (int i = 0; i < d; ++i) v += std::lgamma(x - 0.5 * i);
  return v;
}

inline double inverse_wishart_logpdf(const Matrix& sigma, double nu,
                                     const Matrix& scale) {
  const int d = static_cast<int>(sigma.rows());
  Eigen::LLT<Matrix> ls(symmetrize(scale));
  Eigen::LLT<Matrix> lx(symmetrize(sigma));
  if (ls.info() != Eigen::Success || lx.info() != Eigen::Success) return kNegInf;
  double logdet_scale = 2.0 * Matrix(ls.matrixL()).diagonal().array().log().sum();
  double logdet_sigma = 2.0 * Matrix(lx.matrixL()).diagonal().array().log().sum();
  Matrix sigma_inv = lx.solve(Matrix::Identity(d, d));
  return 0.5 * nu * logdet_scale - 0.5 * nu * d * std::log(2.0) -
         log_multi_gamma(0.5 * nu, d) - 0.5 * (nu + d + 1) * logdet_sigma -
         0.5 * (scale * sigma_inv).trace();
}

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// log of the unsigned Stirling number of the first kind |s(n, k)|, either via
// the stated Gamma/log closed-form approximation or the exact triangular
// recurrence |s(n+1,k)| = n|s(n,k)| + |s(n,k-1)| evaluated in log space.
inline double log_stirling_first(int n, int k, bool exact) {
  constexpr double kEuler = 0.5772156649015328606;
  if (k < 1 || k > n) return kNegInf;
  if (!exact)
    return std::lgamma(n) - std::lgamma(k) +
           (k - 1) * std::log(kEuler + std::log(static_cast<double>(n)));
  std::vector<double> prev(static_cast<std::size_t>(n) + 1, kNegInf);
  std::vector<double> cur(static_cast<std::size_t>(n) + 1, kNegInf);
  prev[0] = 0.0;  // |s(0,0)| = 1
  for (int m = 1; m <= n; ++m) {
    std::fill(cur.begin(), cur.end(), kNegInf);
    for (int j = 1; j <= m; ++j) {
      double carry = prev[j] == kNegInf ? kNegInf : std::log(m - 1.0) + prev[j];
      cur[j] = log_add_exp(carry, prev[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[k];
}

// Number-of-unique-values likelihood for the concentration parameter.
inline double log_unique_count_lik(double alpha, int i_star, int n_units,
                                   bool exact_stirling) {
  return log_stirling_first(n_units, i_star, exact_stirling) +
         i_star * std::log(alpha) + std::lgamma(alpha) - std::lgamma(n_units + alpha);
}

}  // namespace detail

struct DpHyperBounds {
  double alpha_lo = 1e-5, alpha_hi = 50.0;   // concentration
  double a_lo = 1e-5, a_hi = 50.0;           // mean precision
  double vtheta_lo = 1e-5, vtheta_hi = 600.0;  // IW scale multiplier
  double nu_lo = 1e-5, nu_hi = 80.0;         // IW dof above d-1 (via d-1+exp(z))
  double power = 0.8;                        // prior spread exponent
  bool exact_stirling = false;
  int grid_points = 64;
};

// Preset matching the narrower contribution-model bounds.
inline DpHyperBounds gamification_hyper_bounds() {
  DpHyperBounds b;
  b.a_lo = 0.01;
  b.a_hi = 2.0;
  b.vtheta_lo = 0.1;
  b.vtheta_hi = 3.0;
  b.nu_lo = 0.1;
  b.nu_hi = 4.0;
  return b;
}

struct DpHyperDraw {
  double alpha_d = 1.0;
  DpBaseHypers base;
};

// Griddy Gibbs draws for (alpha_d, a, nu, vtheta). alpha_d combines the
// unique-count likelihood with the bounded power prior; the base-measure
// hypers score the unique atoms under G0 (a independent of (nu, vtheta)).
inline DpHyperDraw draw_dp_hypers(const std::vector<AtomParams>& unique_atoms,
                                  int i_star, int n_units,
                                  const DpHyperBounds& bounds, Rng& rng,
                                  const DpBaseHypers& current) {
  require(i_star >= 1, "draw_dp_hypers: I* >= 1");
  const int g_n = bounds.grid_points;
  const int d = unique_atoms.empty() ? 1 : static_cast<int>(unique_atoms[0].mu.size());

  auto log_grid = [g_n](double lo, double hi) {
    Vector g(g_n);
    double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < g_n; ++i)
      g(i) = std::exp(llo + (lhi - llo) * i / (g_n - 1));
    return g;
  };

  auto draw_from = [&rng](const Vector& grid, const Vector& logpost) {
    double lse = log_sum_exp(logpost);
    if (!std::isfinite(lse))
      throw std::runtime_error("draw_dp_hypers: grid mass underflow after widening");
    Vector w = (logpost.array() - lse).exp();
    return grid(rng.categorical(w));
  };

  DpHyperDraw out;
  out.base = current;

  // Concentration alpha^d.
  {
    Vector grid = log_grid(bounds.alpha_lo, bounds.alpha_hi);
    Vector logpost(g_n);
    const double width = bounds.alpha_hi - bounds.alpha_lo;
    bool widened = false;
    for (;;) {
      for (int i = 0; i < g_n; ++i) {
        double alpha = grid(i);
        double prior =
            width <= 0.0
                ? 0.0
                : bounds.power *
                      std::log(std::max(1.0 - (alpha - bounds.alpha_lo) / width,
                                        1e-300));
        logpost(i) = detail::log_unique_count_lik(alpha, i_star, n_units,
                                                  bounds.exact_stirling) +
                     prior;
      }
      if (std::isfinite(log_sum_exp(logpost)) || widened) break;
      grid = log_grid(bounds.alpha_lo * 0.1, bounds.alpha_hi * 10.0);
      widened = true;
    }
    out.alpha_d = draw_from(grid, logpost);
  }

  if (unique_atoms.empty()) return out;

  // a | unique atoms: product of N(mu* | 0, Sigma*/a) terms.
  {
    Vector grid = log_grid(bounds.a_lo, bounds.a_hi);
    Vector logpost = Vector::Zero(g_n);
    for (int i = 0; i < g_n; ++i) {
      double a = grid(i);
      for (const auto& atom : unique_atoms) {
        Matrix prec = atom.sigma.llt().solve(Matrix::Identity(d, d));
        double quad = atom.mu.dot(prec * atom.mu);
        logpost(i) += 0.5 * d * std::log(a) - 0.5 * a * quad;
      }
    }
    out.base.a = draw_from(grid, logpost);
  }

  // (nu, vtheta) | unique atoms: sequential griddy sub-sweeps on the IW terms.
  // nu is parameterized as d-1+exp(z) so the density stays proper.
  {
    auto iw_score = [&](double nu, double vtheta) {
      double s = 0.0;
      Matrix scale = nu * vtheta * Matrix::Identity(d, d);
      for (const auto& atom : unique_atoms)
        s += detail::inverse_wishart_logpdf(atom.sigma, nu, scale);
      return s;
    };
    Vector zgrid(g_n), nugrid(g_n);
    {
      double zlo = std::log(bounds.nu_lo), zhi = std::log(bounds.nu_hi);
      for (int i = 0; i < g_n; ++i) {
        zgrid(i) = zlo + (zhi - zlo) * i / (g_n - 1);
        nugrid(i) = (d - 1) + std::exp(zgrid(i));
      }
    }
    Vector logpost(g_n);
    for (int i = 0; i < g_n; ++i) logpost(i) = iw_score(nugrid(i), current.vtheta);
    double nu = draw_from(nugrid, logpost);

    Vector vgrid = log_grid(bounds.vtheta_lo, bounds.vtheta_hi);
    for (int i = 0; i < g_n; ++i) logpost(i) = iw_score(nu, vgrid(i));
    out.base.vtheta = draw_from(vgrid, logpost);
    out.base.nu = nu;
  }
  return out;
}

// Bayes regression draw of the hierarchical coefficient matrix Delta (d x q)
// from Lambda_i = Delta z_i + mu_{k_i} + eps_i, eps_i ~ N(0, Sigma_{k_i}),
// under a diffuse prior (ridge only as a rank guard).
struct DeltaDraw {
  Matrix delta;
  Matrix posterior_mean;
  bool ridged = false;
};

inline DeltaDraw draw_delta(const std::vector<Vector>& lambdas,
                            const std::vector<Vector>& zs,
                            const std::vector<int>& indicators,
                            const std::vector<AtomParams>& atoms, Rng& rng) {
  const int d = static_cast<int>(lambdas.front().size());
  const int q = static_cast<int>(zs.front().size());
  require(q >= 1, "draw_delta: needs hierarchy covariates");

  Matrix precision = Matrix::Zero(d * q, d * q);
  Vector shift = Vector::Zero(d * q);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const auto& atom = atoms[indicators[i]];
    Matrix prec = atom.sigma.llt().solve(Matrix::Identity(d, d));
    Vector resid = lambdas[i] - atom.mu;
    const Vector& z = zs[i];
    for (int c = 0; c < q; ++c) {
      for (int c2 = 0; c2 < q; ++c2)
        precision.block(c * d, c2 * d, d, d) += z(c) * z(c2) * prec;
      shift.segment(c * d, d) += z(c) * (prec * resid);
    }
  }

  DeltaDraw out;
  double scale = std::max(precision.diagonal().maxCoeff(), 1.0);
  if (min_eigenvalue(precision) < 1e-10 * scale) {
    precision += 1e-6 * scale * Matrix::Identity(d * q, d * q);
    out.ridged = true;
  }
  Eigen::LLT<Matrix> llt(symmetrize(precision));
  Matrix cov = llt.solve(Matrix::Identity(d * q, d * q));
  Vector mean = cov * shift;
  Vector vec = rng.mvn(mean, symmetrize(cov));
  out.delta = Matrix(d, q);
  out.posterior_mean = Matrix(d, q);
  for (int c = 0; c < q; ++c) {
    out.delta.col(c) = vec.segment(c * d, d);
    out.posterior_mean.col(c) = mean.segment(c * d, d);
  }
  return out;
}

// One random-walk Metropolis step on a unit's coefficients. The proposal
// covariance is s^2 (H_i + Sigma_k^{-1})^{-1}; H_i is the unit's curvature
// (precomputed from the fractional likelihood) and Sigma_k the atom
// covariance. A non-invertible sum falls back to Sigma_k itself.
struct MhStep {
  Vector lambda;
  bool accepted = false;
};

inline MhStep mh_rw_unit(const UnitData& unit, const Vector& lambda_current,
                         const Vector& prior_mean, const Matrix& prior_sigma,
                         double s, const Matrix& unit_hessian, Rng& rng) {
  const int d = static_cast<int>(lambda_current.size());
  require(is_psd(prior_sigma, 1e-7), "mh_rw_unit: atom sigma must be PSD");

  Matrix prior_prec = prior_sigma.llt().solve(Matrix::Identity(d, d));
  Matrix omega_inv = unit_hessian + prior_prec;
  Matrix omega;
  Eigen::LLT<Matrix> llt(symmetrize(omega_inv));
  if (llt.info() == Eigen::Success) {
    omega = llt.solve(Matrix::Identity(d, d));
  } else {
    Matrix ridged = symmetrize(omega_inv) + 1e-6 * Matrix::Identity(d, d);
    Eigen::LLT<Matrix> retry(ridged);
    omega = retry.info() == Eigen::Success ? retry.solve(Matrix::Identity(d, d))
                                           : prior_sigma;
  }

  Vector proposal = lambda_current + s * rng.mvn(Vector::Zero(d), symmetrize(omega));
  double log_target_new = unit_loglik(proposal, unit) +
                          mvn_logpdf(proposal, prior_mean, prior_sigma);
  double log_target_old = unit_loglik(lambda_current, unit) +
                          mvn_logpdf(lambda_current, prior_mean, prior_sigma);
  MhStep step;
  if (std::log(rng.uniform() + 1e-300) < log_target_new - log_target_old) {
    step.lambda = proposal;
    step.accepted = true;
  } else {
    step.lambda = lambda_current;
  }
  return step;
}

// Curvature of the fractional likelihood at its maximum, found by a short
// gradient climb; central finite differences, ridged if near-singular.
inline Matrix unit_fractional_hessian(
    const UnitData& unit, const std::function<double(const Vector&)>& pooled_ll,
    const std::function<Vector(const Vector&)>& pooled_grad, double w, double n_i,
    double n_total) {
  const int d = unit.dim();
  const double beta = n_i / n_total;
  auto f = [&](const Vector& x) {
    return (1.0 - w) * unit_loglik(x, unit) + w * beta * pooled_ll(x);
  };
  auto grad = [&](const Vector& x) {
    Vector g = (1.0 - w) * unit_loglik_grad(x, unit);
    if (w > 0.0) g += w * beta * pooled_grad(x);
    return g;
  };

  // Short local search with backtracking.
  Vector x = Vector::Zero(d);
  double fx = f(x);
  for (int it = 0; it < 30; ++it) {
    Vector g = grad(x);
    if (g.norm() < 1e-7) break;
    double step = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 20; ++bt) {
      Vector cand = x + step * g / std::max(1.0, g.norm());
      double fc = f(cand);
      if (fc > fx) {
        x = cand;
        fx = fc;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }

  Matrix hess(d, d);
  const double h = 1e-4;
  for (int r = 0; r < d; ++r) {
    for (int c = r; c < d; ++c) {
      Vector pp = x, pm = x, mp = x, mm = x;
      pp(r) += h; pp(c) += h;
      pm(r) += h; pm(c) -= h;
      mp(r) -= h; mp(c) += h;
      mm(r) -= h; mm(c) -= h;
      double second = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
      hess(r, c) = hess(c, r) = -second;  // negative Hessian of the loglik
    }
  }
  // Ridge up to positive definiteness.
  double floor = 1e-6;
  while (!is_psd(hess, 1e-10) && floor < 1e3) {
    hess += floor * Matrix::Identity(d, d);
    floor *= 10.0;
  }
  return hess;
}

struct DpSamplerConfig {
  int sweeps = 1500;
  int burn_in = 500;
  int k_trunc = 50;
  double w_frac = 0.1;      // fractional-likelihood tuning weight
  double mh_scale = 0.0;    // 0 -> 2.93/sqrt(d)
  double adapt_target = 0.23;
  DpHyperBounds bounds;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SamplerChains {
  std::vector<Matrix> unit_draws;   // per unit: kept x d
  std::vector<int> occupied_trace;  // I* per sweep
  Vector alpha_draws;
  Vector a_draws, nu_draws, vtheta_draws;
  std::vector<Matrix> delta_draws;
  Vector acceptance_rate;  // per unit
  int kept = 0;

  Vector unit_posterior_mean(int i) const {
    return unit_draws[i].colwise().mean().transpose();
  }
};

// Full Gibbs/Metropolis sweep loop: per-unit MH, indicators, atoms, DP
// hypers, then the hierarchical regression, repeated.
inline SamplerChains run_sampler(const std::vector<UnitData>& panel,
                                 const DpSamplerConfig& cfg) {
  require(!panel.empty(), "run_sampler: panel must be nonempty");
  for (const auto& u : panel) u.validate();
  const int n_units = static_cast<int>(panel.size());
  const int d = panel.front().dim();
  const int q = static_cast<int>(panel.front().z.size());
  for (const auto& u : panel)
    require(u.dim() == d && static_cast<int>(u.z.size()) == q,
            "run_sampler: inconsistent unit layout");

  double n_total = 0.0;
  for (const auto& u : panel) n_total += u.n_obs();

  auto pooled_ll = [&](const Vector& x) {
    double s = 0.0;
    for (const auto& u : panel) s += unit_loglik(x, u);
    return s;
  };
  auto pooled_grad = [&](const Vector& x) {
    Vector g = Vector::Zero(d);
    for (const auto& u : panel) g += unit_loglik_grad(x, u);
    return g;
  };

  // Per-unit curvature, computed once up front.
  std::vector<Matrix> hessians(n_units);
  parallel_for(static_cast<std::size_t>(n_units), cfg.threads, [&](std::size_t i) {
    hessians[i] = unit_fractional_hessian(panel[i], pooled_ll, pooled_grad,
                                          cfg.w_frac, panel[i].n_obs(), n_total);
  });

  Rng rng(cfg.seed);
  DpHyperDraw hypers;
  hypers.alpha_d = std::sqrt(cfg.bounds.alpha_lo * cfg.bounds.alpha_hi);
  hypers.base.a = std::sqrt(cfg.bounds.a_lo * cfg.bounds.a_hi);
  // A proper starting dof: the geometric midpoint of the nu bounds can sit
  // vanishingly close to d-1 and make the base measure effectively improper.
  hypers.base.nu = (d - 1) + std::clamp(4.0, cfg.bounds.nu_lo, cfg.bounds.nu_hi);
  hypers.base.vtheta = std::sqrt(cfg.bounds.vtheta_lo * cfg.bounds.vtheta_hi);

  std::vector<Vector> lambdas(n_units, Vector::Zero(d));
  std::vector<int> indicators(n_units, 0);
  std::vector<AtomParams> atoms(cfg.k_trunc);
  for (auto& atom : atoms) {
    atom.mu = Vector::Zero(d);
    atom.sigma = Matrix::Identity(d, d);
  }
  Vector pi = Vector::Constant(cfg.k_trunc, 1.0 / cfg.k_trunc);
  Matrix delta = Matrix::Zero(d, std::max(q, 0));

  double s_scale = cfg.mh_scale > 0.0 ? cfg.mh_scale : 2.93 / std::sqrt(d);
  std::vector<long> accept_count(n_units, 0);
  std::vector<long> adapt_accepts(n_units, 0);

  SamplerChains chains;
  chains.unit_draws.assign(n_units, Matrix());
  const int kept_total = cfg.sweeps - cfg.burn_in;
  require(kept_total > 0, "run_sampler: sweeps must exceed burn_in");
  for (auto& m : chains.unit_draws) m.resize(kept_total, d);
  chains.alpha_draws.resize(kept_total);
  chains.a_draws.resize(kept_total);
  chains.nu_draws.resize(kept_total);
  chains.vtheta_draws.resize(kept_total);

  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    // (1) unit-level MH, conditionally independent given atoms/pi/delta.
    std::vector<MhStep> steps(n_units);
    parallel_for(static_cast<std::size_t>(n_units), cfg.threads, [&](std::size_t i) {
      Rng unit_rng = Rng::stream(cfg.seed, (static_cast<std::uint64_t>(sweep) << 24) +
                                               static_cast<std::uint64_t>(i));
      const auto& atom = atoms[indicators[i]];
      Vector prior_mean = atom.mu;
      if (q > 0) prior_mean += delta * panel[i].z;
      steps[i] = mh_rw_unit(panel[i], lambdas[i], prior_mean, atom.sigma, s_scale,
                            hessians[i], unit_rng);
    });
    for (int i = 0; i < n_units; ++i) {
      lambdas[i] = steps[i].lambda;
      if (steps[i].accepted) {
        ++accept_count[i];
        ++adapt_accepts[i];
      }
    }

    // Scale adaptation toward the target rate, burn-in only.
    if (sweep < cfg.burn_in && (sweep + 1) % 50 == 0) {
      double rate = 0.0;
      for (int i = 0; i < n_units; ++i) rate += adapt_accepts[i];
      rate /= 50.0 * n_units;
      s_scale *= std::exp(0.5 * (rate - cfg.adapt_target));
      std::fill(adapt_accepts.begin(), adapt_accepts.end(), 0);
    }

    // (2) indicators
    std::vector<Vector> zs(n_units);
    for (int i = 0; i < n_units; ++i) zs[i] = panel[i].z;
    indicators = gibbs_indicators(lambdas, atoms, pi, delta, zs, rng);

    // (3) atoms from grouped residuals
    std::vector<std::vector<Vector>> groups(cfg.k_trunc);
    for (int i = 0; i < n_units; ++i) {
      Vector resid = lambdas[i];
      if (q > 0) resid -= delta * panel[i].z;
      groups[indicators[i]].push_back(resid);
    }
    int i_star = 0;
    for (int k = 0; k < cfg.k_trunc; ++k) {
      atoms[k] = draw_atom(groups[k], d, hypers.base, rng);
      if (!groups[k].empty()) ++i_star;
    }

    // Stick weights from the posterior sticks Beta(1 + n_k, alpha + n_{>k}).
    {
      Vector n_k = Vector::Zero(cfg.k_trunc);
      for (int i = 0; i < n_units; ++i) n_k(indicators[i]) += 1.0;
      double remaining = 1.0;
      double tail = n_units;
      for (int k = 0; k + 1 < cfg.k_trunc; ++k) {
        tail -= n_k(k);
        double b = rng.beta(1.0 + n_k(k), hypers.alpha_d + tail);
        pi(k) = b * remaining;
        remaining *= (1.0 - b);
      }
      pi(cfg.k_trunc - 1) = remaining;
    }

    // (4) DP hypers from the unique (occupied) atoms
    std::vector<AtomParams> unique_atoms;
    for (int k = 0; k < cfg.k_trunc; ++k)
      if (!groups[k].empty()) unique_atoms.push_back(atoms[k]);
    hypers = draw_dp_hypers(unique_atoms, std::max(i_star, 1), n_units, cfg.bounds,
                            rng, hypers.base);

    // (5) hierarchical regression
    if (q > 0) {
      auto dd = draw_delta(lambdas, zs, indicators, atoms, rng);
      delta = dd.delta;
    }

    chains.occupied_trace.push_back(i_star);
    if (sweep >= cfg.burn_in) {
      int at = sweep - cfg.burn_in;
      for (int i = 0; i < n_units; ++i)
        chains.unit_draws[i].row(at) = lambdas[i].transpose();
      chains.alpha_draws(at) = hypers.alpha_d;
      chains.a_draws(at) = hypers.base.a;
      chains.nu_draws(at) = hypers.base.nu;
      chains.vtheta_draws(at) = hypers.base.vtheta;
      if (q > 0) chains.delta_draws.push_back(delta);
    }
  }

  chains.kept = kept_total;
  chains.acceptance_rate.resize(n_units);
  for (int i = 0; i < n_units; ++i)
    chains.acceptance_rate(i) = static_cast<double>(accept_count[i]) / cfg.sweeps;
  return chains;
}

enum class Significance { positive, negative, null_effect };

struct SignificanceSummary {
  // counts[coef][0] = positive-significant, [1] = negative-significant,
  // [2] = null
  std::vector<std::array<int, 3>> counts;
  std::vector<std::vector<Significance>> per_unit;  // [unit][coef]
};

// Classify each unit/coefficient by whether the central credible interval
// excludes zero.
inline SignificanceSummary significance_summary(const SamplerChains& chains,
                                                double level = 0.95) {
  require(chains.kept >= 100, "significance_summary: need >= 100 kept draws");
  const int d = static_cast<int>(chains.unit_draws.front().cols());
  SignificanceSummary summary;
  summary.counts.assign(d, {0, 0, 0});
  const double tail = 0.5 * (1.0 - level);

  for (const auto& draws : chains.unit_draws) {
    std::vector<Significance> row(d);
    for (int c = 0; c < d; ++c) {
      std::vector<double> v(draws.rows());
      for (int r = 0; r < draws.rows(); ++r) v[r] = draws(r, c);
      std::sort(v.begin(), v.end());
      auto quantile = [&](double p) {
        double idx = p * (v.size() - 1);
        auto lo = static_cast<std::size_t>(idx);
        double frac = idx - lo;
        return lo + 1 < v.size() ? v[lo] * (1 - frac) + v[lo + 1] * frac : v[lo];
      };
      double lo = quantile(tail), hi = quantile(1.0 - tail);
      if (lo > 0.0) {
        row[c] = Significance::positive;
        ++summary.counts[c][0];
      } else if (hi < 0.0) {
        row[c] = Significance::negative;
        ++summary.counts[c][1];
      } else {
        row[c] = Significance::null_effect;
        ++summary.counts[c][2];
      }
    }
    summary.per_unit.push_back(std::move(row));
  }
  return summary;
}

}  // namespace structest
