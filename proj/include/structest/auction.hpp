#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "structest/kalman.hpp"
#include "structest/optim.hpp"
#include "structest/quadrature.hpp"
#include "structest/rng.hpp"

namespace structest {

// Bidder-level structural parameters: winner regret, loser regret, valuation
// revelation multiplier, learning weight on the displayed board bid.
struct BidderParams {
  double alpha = 0.0;
  double beta = 0.0;
  double delta = 1.0;
  double rho = 0.0;

  void validate() const {
    require(delta > 0.0, "bidder: delta must be positive");
    require(rho >= 0.0, "bidder: rho must be non-negative");
  }
};

// Auction-level evolution parameters and the six state-space variances.
struct AuctionParams {
  double tau = 1.0;    // bid growth
  double gamma = 0.0;  // bid drift (currency units)
  double iota = 1.0;   // mean entrance rate between bids
  double eta = 0.0;    // sniping trend multiplier
  double sigma_v = 1.0;      // bid observation
  double sigma_w = 1.0;      // bid state
  double sigma_zeta1 = 1.0;  // count observation
  double sigma_xi1 = 1.0;    // count state
  double sigma_zeta2 = 0.1;  // valuation observation (log scale)
  double sigma_xi2 = 0.1;    // valuation state (log scale)

  void validate() const {
    require(tau >= 0 && gamma >= 0 && iota >= 0 && eta >= 0,
            "auction: evolution parameters must be non-negative");
    require(sigma_v > 0 && sigma_w > 0 && sigma_zeta1 > 0 && sigma_xi1 > 0 &&
                sigma_zeta2 > 0 && sigma_xi2 > 0,
            "auction: variances must be positive");
  }
};

// One auction's observed path: proxy bids in entry order with bidder ids, the
// displayed board bid each bidder saw, cumulative distinct bidders, and the
// time trend counter.
struct AuctionTrace {
  int auction_id = 0;
  int cluster_id = 0;
  std::vector<double> bids;        // proxy bids, entry order
  std::vector<int> bidder_ids;
  std::vector<double> board;       // board bid visible when each bid entered
  std::vector<int> cum_bidders;    // non-decreasing
  std::vector<double> time_trend;

  int n_bids() const { return static_cast<int>(bids.size()); }

  void validate() const {
    require(!bids.empty(), "trace: needs bids");
    require(bids.size() == bidder_ids.size() && bids.size() == board.size() &&
                bids.size() == cum_bidders.size() && bids.size() == time_trend.size(),
            "trace: ragged columns");
    for (std::size_t t = 1; t < board.size(); ++t) {
      require(board[t] >= board[t - 1] - 1e-9, "trace: board must be non-decreasing");
      require(cum_bidders[t] >= cum_bidders[t - 1], "trace: counts must be non-decreasing");
    }
  }
};

// Belief about the latent-bid distribution at one epoch plus the effective
// opponent count; the order statistic needs at least one opponent.
struct MaxBidBelief {
  double mean = 0.0;
  double var = 1.0;
  int n_t = 2;

  void validate() const {
    require(var > 0.0, "belief: variance must be positive");
    require(n_t >= 2, "belief: order statistic needs n >= 2");
  }
};

struct MaxBidDist {
  std::function<double(double)> cdf;  // G = F^{n-1}
  std::function<double(double)> pdf;  // g = (n-1) F^{n-2} f
  // log(G/g) computed in log space; present for the normal belief so the
  // ratio stays defined where both G and g underflow. Empty for custom
  // distributions, which fall back to the raw quotient.
  std::function<double(double)> log_cdf_pdf_ratio;
  double mean, sd;
  int n_t;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf_std(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

inline double normal_logcdf(double z) {
  if (z > -8.0) return std::log(normal_cdf(z));
  // Lower-tail asymptotic expansion of the Mills ratio.
  double z2 = z * z;
  return -0.5 * z2 - 0.5 * std::log(2.0 * M_PI) - std::log(-z) +
         std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

inline MaxBidDist max_bid_dist(const MaxBidBelief& belief) {
  belief.validate();
  const double m = belief.mean;
  const double s = std::sqrt(belief.var);
  const int n = belief.n_t;
  MaxBidDist dist;
  dist.mean = m;
  dist.sd = s;
  dist.n_t = n;
  dist.cdf = [m, s, n](double x) {
    return std::pow(normal_cdf((x - m) / s), n - 1);
  };
  dist.pdf = [m, s, n](double x) {
    double z = (x - m) / s;
    return (n - 1) * std::pow(normal_cdf(z), n - 2) * normal_pdf_std(z) / s;
  };
  dist.log_cdf_pdf_ratio = [m, s, n](double x) {
    double z = (x - m) / s;
    double log_phi = -0.5 * z * z - 0.5 * std::log(2.0 * M_PI);
    return normal_logcdf(z) - log_phi + std::log(s) -
           std::log(static_cast<double>(n - 1));
  };
  return dist;
}

enum class UtilityVariant { own_bid, lambda_blend };

struct UtilityConfig {
  UtilityVariant variant = UtilityVariant::own_bid;
  double lambda = 1.0;      // blend weight on the own bid
  double board_max = 0.0;   // displayed board bid for the blend variant
  double quad_tol = 1e-8;   // absolute tolerance per unit of utility scale
};

// Expected utility of bidding b at valuation v against the maximum-bid belief:
// expected profit minus anticipated winner regret on [lo, b] and anticipated
// loser regret on [b, v]. Integrals run by adaptive quadrature over the
// belief's effective support. In the blend variant the payment-relevant bid is
// lambda b + (1 - lambda) board_max while the win event stays at b.
inline double bidder_utility(double b, double v, const MaxBidDist& dist, double alpha,
                             double beta, const UtilityConfig& cfg = {}) {
  require(std::isfinite(b) && std::isfinite(v), "utility: b, v must be finite");
  double b_pay = b;
  if (cfg.variant == UtilityVariant::lambda_blend) {
    require(cfg.lambda >= 0.0 && cfg.lambda <= 1.0, "utility: lambda in [0,1]");
    b_pay = cfg.lambda * b + (1.0 - cfg.lambda) * cfg.board_max;
  }

  const double lo = dist.mean - 10.0 * dist.sd;
  const double scale = 1.0 + std::abs(v) + std::abs(b) + dist.sd;
  const double tol = cfg.quad_tol * scale;

  double u = (v - b_pay) * dist.cdf(b);
  if (alpha != 0.0 && b > lo) {
    double winner = adaptive_quadrature(
        [&](double z) { return (b_pay - z) * dist.pdf(z); }, lo, b, tol);
    u -= alpha * winner;
  }
  if (beta != 0.0 && v > b) {
    double loser = adaptive_quadrature(
        [&](double z) { return (v - z) * dist.pdf(z); }, b, v, tol);
    u -= beta * loser;
  }
  return u;
}

// First-order-condition inversion of the bid into the revealed valuation:
//   v = b + G(b)(1 + alpha) / (g(b)(1 + beta)).
// The printed form carries a cancelling +/- alpha b g pair; see the
// regression test proving the two agree.
inline double foc_valuation(double b, const MaxBidDist& dist, double alpha,
                            double beta) {
  if (std::abs(1.0 + beta) < 1e-8)
    throw std::runtime_error("foc_valuation: loser-regret singularity");
  double ratio;
  if (dist.log_cdf_pdf_ratio) {
    double log_ratio = dist.log_cdf_pdf_ratio(b);
    if (log_ratio > 700.0)
      throw std::runtime_error("foc_valuation: degenerate density");
    ratio = std::exp(log_ratio);
  } else {
    double g = dist.pdf(b);
    if (g < 1e-300) throw std::runtime_error("foc_valuation: degenerate density");
    ratio = dist.cdf(b) / g;
  }
  return b + ratio * (1.0 + alpha) / (1.0 + beta);
}

namespace detail {

// Literal transcription of the printed inversion, kept as the oracle for the
// simplification above.
inline double foc_valuation_literal(double b, const MaxBidDist& dist, double alpha,
                                    double beta) {
  double cdf = dist.cdf(b);
  double g = dist.pdf(b);
  double numerator =
      cdf + b * g + alpha * cdf - alpha * b * g + (alpha + beta) * b * g;
  return numerator / (g + beta * g);
}

}  // namespace detail

// Expectation of the FOC inversion over the latent-bid belief, Gauss–Hermite
// by default. The ratio G/g is not integrable against the far upper tail, so
// the expectation runs over the belief truncated at +/- z_cut standard
// deviations with renormalized weights (documented estimation choice).
struct ExpectedValuationConfig {
  int nodes = 64;
  double z_cut = 4.75;
  bool monte_carlo = false;  // fallback used by the blend variant
  int draws = 100000;
  std::uint64_t seed = 0;
};

inline double expected_valuation(const MaxBidBelief& bid_belief, double count_mean,
                                 double alpha, double beta,
                                 const ExpectedValuationConfig& cfg = {}) {
  MaxBidBelief belief = bid_belief;
  belief.n_t = std::max(2, static_cast<int>(std::ceil(count_mean)));
  belief.validate();
  auto dist = max_bid_dist(belief);
  const double s = dist.sd;

  if (cfg.monte_carlo) {
    Rng rng(cfg.seed);
    double acc = 0.0;
    long used = 0;
    for (int i = 0; i < cfg.draws; ++i) {
      double z = rng.normal();
      if (std::abs(z) > cfg.z_cut) continue;
      acc += foc_valuation(belief.mean + s * z, dist, alpha, beta);
      ++used;
    }
    require(used > 0, "expected_valuation: no draws inside the truncation");
    return acc / used;
  }

  GaussHermite gh(cfg.nodes);
  double acc = 0.0, wsum = 0.0;
  for (int i = 0; i < cfg.nodes; ++i) {
    if (std::abs(gh.nodes(i)) > cfg.z_cut) continue;
    double theta = belief.mean + s * gh.nodes(i);
    acc += gh.weights(i) * foc_valuation(theta, dist, alpha, beta);
    wsum += gh.weights(i);
  }
  return acc / wsum;
}

// Weighted least squares of per-unit parameter vectors on covariates within
// each group; residual variances feed the hierarchy prior terms. Groups
// smaller than the covariate dimension are ridged; a single-member group gets
// its own center with the pooled residual variance as fallback.
struct WlsHierarchy {
  std::vector<Matrix> coef;     // per group: q_cov x dim
  std::vector<Vector> sigma2;   // per group: dim (residual variance, floored)
  bool ridged = false;
};

inline WlsHierarchy wls_hierarchy(const std::vector<Vector>& params,
                                  const std::vector<Vector>& covariates,
                                  const std::vector<int>& groups, int n_groups,
                                  double var_floor = 1e-4) {
  require(params.size() == covariates.size() && params.size() == groups.size(),
          "wls: ragged inputs");
  require(!params.empty(), "wls: empty inputs");
  const int dim = static_cast<int>(params.front().size());
  const int q = static_cast<int>(covariates.front().size());

  WlsHierarchy out;
  out.coef.assign(n_groups, Matrix::Zero(q, dim));
  out.sigma2.assign(n_groups, Vector::Constant(dim, var_floor));

  // Pooled variance fallback for tiny groups.
  Vector pooled_mean = Vector::Zero(dim);
  for (const auto& p : params) pooled_mean += p;
  pooled_mean /= static_cast<double>(params.size());
  Vector pooled_var = Vector::Constant(dim, 0.0);
  for (const auto& p : params)
    pooled_var += (p - pooled_mean).cwiseProduct(p - pooled_mean);
  pooled_var /= std::max<double>(1.0, static_cast<double>(params.size()) - 1);
  pooled_var = pooled_var.cwiseMax(var_floor);

  for (int g = 0; g < n_groups; ++g) {
    std::vector<int> members;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i] == g) members.push_back(static_cast<int>(i));
    if (members.empty()) {
      out.sigma2[g] = pooled_var;
      continue;
    }
    Matrix x(members.size(), q);
    Matrix y(members.size(), dim);
    for (std::size_t r = 0; r < members.size(); ++r) {
      x.row(static_cast<int>(r)) = covariates[members[r]].transpose();
      y.row(static_cast<int>(r)) = params[members[r]].transpose();
    }
    Matrix gram = x.transpose() * x;
    if (static_cast<int>(members.size()) < q ||
        min_eigenvalue(gram) < 1e-10 * std::max(1.0, gram.diagonal().maxCoeff())) {
      gram += 1e-6 * Matrix::Identity(q, q);
      out.ridged = true;
    }
    out.coef[g] = gram.llt().solve(x.transpose() * y);
    Matrix resid = y - x * out.coef[g];
    if (members.size() == 1) {
      out.sigma2[g] = pooled_var;  // center on the lone member, pooled spread
    } else {
      for (int c = 0; c < dim; ++c)
        out.sigma2[g](c) =
            std::max(resid.col(c).squaredNorm() / members.size(), var_floor);
    }
  }
  return out;
}

// Scalar Kalman pass for the latent-bid belief on the sorted bid sequence
// (theta' = tau theta + gamma); returns the loglik and the one-step-ahead
// predicted beliefs each bidder holds when raising her bid.
struct BidFilterResult {
  double loglik = 0.0;
  std::vector<double> pred_mean;  // belief about the latent bid before bid t
  std::vector<double> pred_var;
};

inline BidFilterResult filter_bids(const std::vector<double>& bids_sorted,
                                   const AuctionParams& psi) {
  BidFilterResult res;
  double m = bids_sorted.empty() ? 0.0 : bids_sorted.front();
  double p = 100.0 * psi.sigma_v;  // diffuse start at the first bid's scale
  for (double b : bids_sorted) {
    double m_pred = psi.tau * m + psi.gamma;
    double p_pred = psi.tau * psi.tau * p + psi.sigma_w;
    res.pred_mean.push_back(m_pred);
    res.pred_var.push_back(p_pred);
    double s = p_pred + psi.sigma_v;
    res.loglik += normal_logpdf(b, m_pred, s);
    double k = p_pred / s;
    m = m_pred + k * (b - m_pred);
    p = (1.0 - k) * p_pred;
  }
  return res;
}

// Scalar Kalman pass for the latent bidder count with the time-varying
// entrance drift iota + eta * trend.
struct CountFilterResult {
  double loglik = 0.0;
  std::vector<double> pred_mean;
};

inline CountFilterResult filter_counts(const std::vector<int>& counts,
                                       const std::vector<double>& trend,
                                       const AuctionParams& psi) {
  CountFilterResult res;
  double m = counts.empty() ? 0.0 : counts.front();
  double p = 100.0 * psi.sigma_zeta1;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    double m_pred = m + psi.iota + psi.eta * trend[t];
    double p_pred = p + psi.sigma_xi1;
    res.pred_mean.push_back(m_pred);
    double s = p_pred + psi.sigma_zeta1;
    res.loglik += normal_logpdf(counts[t], m_pred, s);
    double k = p_pred / s;
    m = m_pred + k * (counts[t] - m_pred);
    p = (1.0 - k) * p_pred;
  }
  return res;
}

// Log-likelihood of the affiliated-valuation evolution for one auction: the
// per-bid measure v_it must clear the learning floor rho_i * board; the log
// residual follows a random walk in the common value with a per-bid log-delta
// offset. level_prior anchors log(theta_0).
struct AffiliatedInputs {
  std::vector<double> valuations;  // v_it per bid, entry order
  std::vector<double> boards;      // board bid seen before each bid
  std::vector<int> bidder_ids;
};

inline double affiliated_loglik(const AffiliatedInputs& in,
                                const std::map<int, BidderParams>& bidders,
                                double sigma_zeta2, double sigma_xi2,
                                const GaussianBelief& level_prior) {
  require(in.valuations.size() == in.boards.size() &&
              in.valuations.size() == in.bidder_ids.size(),
          "affiliated: ragged inputs");
  std::vector<Observation> obs;
  obs.reserve(in.valuations.size());
  for (std::size_t t = 0; t < in.valuations.size(); ++t) {
    const auto& bp = bidders.at(in.bidder_ids[t]);
    double margin = in.valuations[t] - bp.rho * in.boards[t];
    if (margin <= 0.0)
      throw std::runtime_error("affiliated: valuation below learning floor");
    Vector y(1);
    y(0) = std::log(margin) - std::log(bp.delta);
    obs.push_back(y);
  }
  LinearStateSpace walk;
  walk.transition = Matrix::Identity(1, 1);
  walk.drift = Vector::Zero(1);
  walk.state_noise = Matrix::Constant(1, 1, sigma_xi2);
  walk.obs_map = Matrix::Identity(1, 1);
  walk.obs_noise = Matrix::Constant(1, 1, sigma_zeta2);
  return kf_filter(obs, walk, level_prior).loglik;
}

// ---------------------------------------------------------------------------
// Full-panel posterior assembly and MAP estimation
// ---------------------------------------------------------------------------

struct AuctionPanel {
  std::vector<AuctionTrace> traces;
  std::map<int, Vector> bidder_covariates;   // d_i (leading 1 recommended)
  std::map<int, Vector> auction_covariates;  // D_j keyed by auction_id

  std::vector<int> bidder_ids() const {
    std::vector<int> ids;
    for (const auto& [id, v] : bidder_covariates) ids.push_back(id);
    return ids;
  }
};

// Sorted view of a trace: bids ascend (with their bidder ids); the board,
// count, and trend columns stay positional.
struct SortedTrace {
  std::vector<double> bids;
  std::vector<int> bidder_ids;
  const AuctionTrace* raw = nullptr;
};

inline SortedTrace sorted_view(const AuctionTrace& trace) {
  std::vector<int> idx(trace.bids.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return trace.bids[a] < trace.bids[b];
  });
  SortedTrace sv;
  sv.raw = &trace;
  for (int i : idx) {
    sv.bids.push_back(trace.bids[i]);
    sv.bidder_ids.push_back(trace.bidder_ids[i]);
  }
  return sv;
}

// Per-bid decomposition of the expected valuation, v_it = base + r * slope
// with r = (1 + alpha)(1 + beta)^{-1}; linear in r because the FOC inversion
// is. Cached once per E-step so bidder-level searches are O(1) per bid.
struct ValuationCache {
  std::vector<double> base;   // truncated mean of theta
  std::vector<double> slope;  // truncated E[G/g]
  std::vector<double> board;
  std::vector<int> bidder_ids;
};

inline ValuationCache build_valuation_cache(const SortedTrace& sv,
                                            const AuctionParams& psi,
                                            const ExpectedValuationConfig& cfg = {}) {
  ValuationCache cache;
  auto bid_filter = filter_bids(sv.bids, psi);
  auto count_filter =
      filter_counts(sv.raw->cum_bidders, sv.raw->time_trend, psi);
  GaussHermite gh(cfg.nodes);

  for (std::size_t t = 0; t < sv.bids.size(); ++t) {
    MaxBidBelief belief;
    belief.mean = bid_filter.pred_mean[t];
    belief.var = std::max(bid_filter.pred_var[t] + psi.sigma_v, 1e-12);
    belief.n_t = std::max(2, static_cast<int>(std::ceil(count_filter.pred_mean[t])));
    auto dist = max_bid_dist(belief);
    double s = dist.sd;

    double base = 0.0, slope = 0.0, wsum = 0.0;
    for (int i = 0; i < cfg.nodes; ++i) {
      if (std::abs(gh.nodes(i)) > cfg.z_cut) continue;
      double theta = belief.mean + s * gh.nodes(i);
      base += gh.weights(i) * theta;
      slope += gh.weights(i) * dist.cdf(theta) / std::max(dist.pdf(theta), 1e-300);
      wsum += gh.weights(i);
    }
    cache.base.push_back(base / wsum);
    cache.slope.push_back(slope / wsum);
    cache.board.push_back(sv.raw->board[t]);
    cache.bidder_ids.push_back(sv.bidder_ids[t]);
  }
  return cache;
}

inline double regret_ratio(const BidderParams& bp) {
  require(std::abs(1.0 + bp.beta) >= 1e-8, "regret ratio: loser-regret singularity");
  return (1.0 + bp.alpha) / (1.0 + bp.beta);
}

// Valuation-evolution log-likelihood for one auction from the cached linear
// decomposition; infeasible (v below the learning floor) combinations yield
// -inf rather than throwing, so searches can reject them. override_id, when
// >= 0, substitutes one bidder's parameters without copying the map.
inline double valuation_loglik_cached(const ValuationCache& cache,
                                      const std::map<int, BidderParams>& bidders,
                                      double sigma_zeta2, double sigma_xi2,
                                      const GaussianBelief& level_prior,
                                      int override_id = -1,
                                      const BidderParams* override_bp = nullptr) {
  std::vector<Observation> obs;
  obs.reserve(cache.base.size());
  for (std::size_t t = 0; t < cache.base.size(); ++t) {
    int id = cache.bidder_ids[t];
    const BidderParams& bp = (id == override_id && override_bp) ? *override_bp
                                                                : bidders.at(id);
    if (std::abs(1.0 + bp.beta) < 1e-8) return kNegInf;
    double v = cache.base[t] + regret_ratio(bp) * cache.slope[t];
    double margin = v - bp.rho * cache.board[t];
    if (margin <= 0.0) return kNegInf;
    Vector y(1);
    y(0) = std::log(margin) - std::log(bp.delta);
    obs.push_back(y);
  }
  LinearStateSpace walk;
  walk.transition = Matrix::Identity(1, 1);
  walk.drift = Vector::Zero(1);
  walk.state_noise = Matrix::Constant(1, 1, sigma_xi2);
  walk.obs_map = Matrix::Identity(1, 1);
  walk.obs_noise = Matrix::Constant(1, 1, sigma_zeta2);
  return kf_filter(obs, walk, level_prior).loglik;
}

inline GaussianBelief default_level_prior(const AuctionTrace& trace) {
  GaussianBelief prior;
  prior.mean = Vector::Constant(1, std::log(std::max(trace.board.front(), 1.0)));
  prior.cov = Matrix::Constant(1, 1, 4.0);
  return prior;
}

struct LogPosteriorParts {
  double bid_ss = 0.0;
  double count_ss = 0.0;
  double valuation = 0.0;
  double bidder_hier = 0.0;
  double auction_hier = 0.0;
  double dirac = 0.0;  // plug-in point masses contribute no density term
  bool feasible = true;

  double total() const {
    return feasible ? bid_ss + count_ss + valuation + bidder_hier + auction_hier + dirac
                    : kNegInf;
  }
};

namespace detail {

inline Vector bidder_to_vec(const BidderParams& bp) {
  Vector v(4);
  v << bp.alpha, bp.beta, bp.delta, bp.rho;
  return v;
}

inline Vector auction_to_vec(const AuctionParams& psi) {
  Vector v(4);
  v << psi.tau, psi.gamma, psi.iota, psi.eta;
  return v;
}

inline double hierarchy_term(const std::vector<Vector>& params,
                             const std::vector<Vector>& covs,
                             const std::vector<int>& groups, int n_groups,
                             double var_floor) {
  auto wls = wls_hierarchy(params, covs, groups, n_groups, var_floor);
  double logp = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Vector fitted = wls.coef[groups[i]].transpose() * covs[i];
    for (int c = 0; c < params[i].size(); ++c)
      logp += normal_logpdf(params[i](c), fitted(c), wls.sigma2[groups[i]](c));
  }
  return logp;
}

}  // namespace detail

// The six-component posterior of the panel at the given parameters. The
// hierarchy plug-ins are refit from the supplied parameters, making this a
// pure deterministic function of its arguments.
inline LogPosteriorParts assemble_log_posterior(
    const AuctionPanel& panel, const std::map<int, BidderParams>& bidders,
    const std::map<int, AuctionParams>& auctions,
    const std::map<int, int>& bidder_segment, int n_segments,
    const std::map<int, int>& auction_cluster, int n_clusters,
    const ExpectedValuationConfig& ev = {}, double hier_floor = 0.25) {
  LogPosteriorParts parts;
  for (const auto& trace : panel.traces) {
    trace.validate();
    const auto& psi = auctions.at(trace.auction_id);
    psi.validate();
    auto sv = sorted_view(trace);
    parts.bid_ss += filter_bids(sv.bids, psi).loglik;
    parts.count_ss +=
        filter_counts(trace.cum_bidders, trace.time_trend, psi).loglik;
    auto cache = build_valuation_cache(sv, psi, ev);
    double vll = valuation_loglik_cached(cache, bidders, psi.sigma_zeta2,
                                         psi.sigma_xi2, default_level_prior(trace));
    if (vll == kNegInf) parts.feasible = false;
    parts.valuation += vll;
  }

  std::vector<Vector> theta, d_cov;
  std::vector<int> seg;
  for (const auto& [id, bp] : bidders) {
    bp.validate();
    theta.push_back(detail::bidder_to_vec(bp));
    d_cov.push_back(panel.bidder_covariates.at(id));
    seg.push_back(bidder_segment.at(id));
  }
  parts.bidder_hier = detail::hierarchy_term(theta, d_cov, seg, n_segments, hier_floor);

  std::vector<Vector> psi_vecs, big_d;
  std::vector<int> clus;
  for (const auto& [id, psi] : auctions) {
    psi_vecs.push_back(detail::auction_to_vec(psi));
    big_d.push_back(panel.auction_covariates.at(id));
    clus.push_back(auction_cluster.at(id));
  }
  parts.auction_hier =
      detail::hierarchy_term(psi_vecs, big_d, clus, n_clusters, hier_floor);
  return parts;
}

struct AuctionFitConfig {
  MCEMConfig mcem{1e-8, 2000, 0};
  int mcem_max_rounds = 8;        // practical outer cap for desk-scale fits
  SAConfig sa_auction{1.0, 0.9, 40, 0.25, 400, 0, 1};
  SAConfig sa_bidder{1.0, 0.9, 40, 0.3, 400, 0, 1};
  ExpectedValuationConfig ev{};
  double hier_floor = 0.25;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct AuctionEstimates {
  std::map<int, BidderParams> bidders;
  std::map<int, AuctionParams> auctions;
  LogPosteriorParts parts;
  double initial_objective = kNegInf;
  std::vector<double> objective_trace;
};

namespace detail {

// Transform helpers for the block searches.
inline Vector pack_psi(const AuctionParams& p) {
  Vector v(8);
  v << std::log(p.tau + 1e-8), std::log(p.gamma + 1e-8), std::log(p.iota + 1e-8),
      std::log(p.eta + 1e-8), std::log(p.sigma_v), std::log(p.sigma_w),
      std::log(p.sigma_zeta1), std::log(p.sigma_xi1);
  return v;
}

inline AuctionParams unpack_psi(const Vector& v, const AuctionParams& base) {
  AuctionParams p = base;
  p.tau = std::max(0.0, std::exp(v(0)) - 1e-8);
  p.gamma = std::max(0.0, std::exp(v(1)) - 1e-8);
  p.iota = std::max(0.0, std::exp(v(2)) - 1e-8);
  p.eta = std::max(0.0, std::exp(v(3)) - 1e-8);
  p.sigma_v = std::exp(v(4));
  p.sigma_w = std::exp(v(5));
  p.sigma_zeta1 = std::exp(v(6));
  p.sigma_xi1 = std::exp(v(7));
  return p;
}

}  // namespace detail

// Data-driven neutral initialization: unit growth, drifts from the observed
// increments, variances from residual moments, and regret-free bidders.
inline AuctionEstimates initialize_auction_fit(const AuctionPanel& panel) {
  AuctionEstimates est;
  for (const auto& trace : panel.traces) {
    AuctionParams psi;
    auto sv = sorted_view(trace);
    double dsum = 0.0, dcount = 0.0, csum = 0.0;
    for (std::size_t t = 1; t < sv.bids.size(); ++t) {
      dsum += sv.bids[t] - sv.bids[t - 1];
      csum += trace.cum_bidders[t] - trace.cum_bidders[t - 1];
      dcount += 1.0;
    }
    psi.tau = 1.0;
    psi.gamma = dcount > 0 ? std::max(dsum / dcount, 0.01) : 1.0;
    psi.iota = dcount > 0 ? std::max(csum / dcount, 0.01) : 0.5;
    psi.eta = 0.01;
    double dvar = 1.0;
    if (dcount > 1) {
      double mean = dsum / dcount;
      double acc = 0.0;
      for (std::size_t t = 1; t < sv.bids.size(); ++t) {
        double d = sv.bids[t] - sv.bids[t - 1] - mean;
        acc += d * d;
      }
      dvar = std::max(acc / dcount, 1e-2);
    }
    psi.sigma_v = 0.5 * dvar;
    psi.sigma_w = 0.5 * dvar;
    psi.sigma_zeta1 = 0.5;
    psi.sigma_xi1 = 0.5;
    psi.sigma_zeta2 = 0.05;
    psi.sigma_xi2 = 0.05;
    est.auctions[trace.auction_id] = psi;
  }
  for (const auto& [id, cov] : panel.bidder_covariates) {
    BidderParams bp;
    bp.alpha = 0.0;
    bp.beta = 0.0;
    bp.delta = 1.0;
    bp.rho = 0.0;
    est.bidders[id] = bp;
  }
  return est;
}

// MAP search: Monte Carlo generalized EM with blockwise simulated annealing.
// The E-step refreshes the belief caches and the WLS plug-ins; the M-step
// improves auction blocks (bid/count lines plus their variances) and bidder
// blocks (valuation line) against the cached beliefs. Infeasible candidates
// score -inf and are simply rejected.
inline AuctionEstimates fit_auction(const AuctionPanel& panel,
                                    const std::map<int, int>& bidder_segment,
                                    int n_segments,
                                    const std::map<int, int>& auction_cluster,
                                    int n_clusters, const AuctionFitConfig& cfg = {}) {
  require(!panel.traces.empty(), "fit_auction: empty panel");
  for (const auto& [id, cov] : panel.bidder_covariates)
    require(bidder_segment.count(id) == 1, "fit_auction: segment missing a bidder");
  for (const auto& trace : panel.traces)
    require(auction_cluster.count(trace.auction_id) == 1,
            "fit_auction: cluster missing an auction");

  AuctionEstimates est = initialize_auction_fit(panel);

  // Bidder id -> auctions she bids in.
  std::map<int, std::vector<int>> bidder_auctions;
  for (std::size_t a = 0; a < panel.traces.size(); ++a)
    for (int id : panel.traces[a].bidder_ids)
      bidder_auctions[id];  // ensure presence
  for (std::size_t a = 0; a < panel.traces.size(); ++a) {
    for (int id : panel.traces[a].bidder_ids) {
      auto& list = bidder_auctions[id];
      if (list.empty() || list.back() != static_cast<int>(a))
        list.push_back(static_cast<int>(a));
    }
  }

  auto posterior = [&](const std::map<int, BidderParams>& bidders,
                       const std::map<int, AuctionParams>& auctions) {
    return assemble_log_posterior(panel, bidders, auctions, bidder_segment,
                                  n_segments, auction_cluster, n_clusters, cfg.ev,
                                  cfg.hier_floor)
        .total();
  };

  est.initial_objective = posterior(est.bidders, est.auctions);
  double current = est.initial_objective;

  Vector prev_params;  // packed for the convergence test
  auto pack_all = [&]() {
    std::vector<double> v;
    for (const auto& [id, bp] : est.bidders) {
      v.push_back(bp.alpha);
      v.push_back(bp.beta);
      v.push_back(bp.delta);
      v.push_back(bp.rho);
    }
    for (const auto& [id, psi] : est.auctions) {
      Vector p = detail::pack_psi(psi);
      for (int i = 0; i < p.size(); ++i) v.push_back(p(i));
      v.push_back(psi.sigma_zeta2);
      v.push_back(psi.sigma_xi2);
    }
    return Eigen::Map<Vector>(v.data(), static_cast<long>(v.size())).eval();
  };
  prev_params = pack_all();

  const int outer_rounds = std::min(cfg.mcem_max_rounds, cfg.mcem.max_iterations);
  for (int round = 0; round < outer_rounds; ++round) {
    // ---- E-step: belief caches at current auction parameters; WLS plug-ins.
    std::vector<SortedTrace> views;
    std::vector<ValuationCache> caches(panel.traces.size());
    views.reserve(panel.traces.size());
    for (const auto& trace : panel.traces) views.push_back(sorted_view(trace));
    parallel_for(panel.traces.size(), cfg.threads, [&](std::size_t a) {
      caches[a] = build_valuation_cache(views[a],
                                        est.auctions.at(panel.traces[a].auction_id),
                                        cfg.ev);
    });

    std::vector<Vector> theta_vecs, d_covs;
    std::vector<int> segs;
    for (const auto& [id, bp] : est.bidders) {
      theta_vecs.push_back(detail::bidder_to_vec(bp));
      d_covs.push_back(panel.bidder_covariates.at(id));
      segs.push_back(bidder_segment.at(id));
    }
    auto bidder_wls =
        wls_hierarchy(theta_vecs, d_covs, segs, n_segments, cfg.hier_floor);

    std::vector<Vector> psi_vecs, big_ds;
    std::vector<int> clusters;
    for (const auto& [id, psi] : est.auctions) {
      psi_vecs.push_back(detail::auction_to_vec(psi));
      big_ds.push_back(panel.auction_covariates.at(id));
      clusters.push_back(auction_cluster.at(id));
    }
    auto auction_wls =
        wls_hierarchy(psi_vecs, big_ds, clusters, n_clusters, cfg.hier_floor);

    // ---- M-step part 1: auction blocks (bid/count lines + all variances).
    std::vector<AuctionParams> new_psis(panel.traces.size());
    parallel_for(panel.traces.size(), cfg.threads, [&](std::size_t a) {
      const auto& trace = panel.traces[a];
      const auto& sv = views[a];
      const auto& cache = caches[a];
      int cluster = auction_cluster.at(trace.auction_id);
      Vector fitted =
          auction_wls.coef[cluster].transpose() * panel.auction_covariates.at(trace.auction_id);
      const Vector& sig2 = auction_wls.sigma2[cluster];
      AuctionParams base = est.auctions.at(trace.auction_id);
      auto level_prior = default_level_prior(trace);

      Objective obj{[&](const Vector& x) -> double {
                      AuctionParams psi = detail::unpack_psi(x.head(8), base);
                      psi.sigma_zeta2 = std::exp(x(8));
                      psi.sigma_xi2 = std::exp(x(9));
                      try {
                        psi.validate();
                      } catch (const std::exception&) {
                        return kNegInf;
                      }
                      double ll = filter_bids(sv.bids, psi).loglik +
                                  filter_counts(trace.cum_bidders, trace.time_trend,
                                                psi)
                                      .loglik;
                      ll += valuation_loglik_cached(cache, est.bidders,
                                                    psi.sigma_zeta2, psi.sigma_xi2,
                                                    level_prior);
                      Vector pv = detail::auction_to_vec(psi);
                      for (int c = 0; c < 4; ++c)
                        ll += normal_logpdf(pv(c), fitted(c), sig2(c));
                      return std::isfinite(ll) ? ll : kNegInf;
                    },
                    10};

      Vector start(10);
      start.head(8) = detail::pack_psi(base);
      start(8) = std::log(base.sigma_zeta2);
      start(9) = std::log(base.sigma_xi2);
      SAConfig sa = cfg.sa_auction;
      sa.seed = cfg.seed + 0x100000 + a * 1000 + static_cast<std::uint64_t>(round);
      AuctionParams psi = base;
      try {
        auto res = simulated_annealing(obj, start, sa);
        psi = detail::unpack_psi(res.x.head(8), base);
        psi.sigma_zeta2 = std::exp(res.x(8));
        psi.sigma_xi2 = std::exp(res.x(9));
      } catch (const std::exception&) {
        // keep the current parameters if the block cannot be searched
      }
      new_psis[a] = psi;
    });
    for (std::size_t a = 0; a < panel.traces.size(); ++a)
      est.auctions[panel.traces[a].auction_id] = new_psis[a];

    // Refresh caches against the updated auction parameters before the bidder
    // pass (still within this round's E-step beliefs contractually; the
    // refresh only tightens the GEM step).
    parallel_for(panel.traces.size(), cfg.threads, [&](std::size_t a) {
      caches[a] = build_valuation_cache(views[a],
                                        est.auctions.at(panel.traces[a].auction_id),
                                        cfg.ev);
    });

    // ---- M-step part 2: bidder blocks against cached beliefs.
    std::vector<int> ids;
    for (const auto& [id, bp] : est.bidders) ids.push_back(id);
    std::vector<BidderParams> new_thetas(ids.size());
    std::vector<int> id_to_seg(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) id_to_seg[i] = bidder_segment.at(ids[i]);

    parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
      int id = ids[i];
      const auto& involved = bidder_auctions[id];
      if (involved.empty()) {
        new_thetas[i] = est.bidders.at(id);
        return;
      }
      int seg = id_to_seg[i];
      Vector fitted =
          bidder_wls.coef[seg].transpose() * panel.bidder_covariates.at(id);
      const Vector& sig2 = bidder_wls.sigma2[seg];

      Objective obj{[&](const Vector& x) -> double {
                      BidderParams bp;
                      bp.alpha = x(0);
                      bp.beta = x(1);
                      bp.delta = std::exp(x(2));
                      bp.rho = std::max(0.0, std::exp(x(3)) - 1e-8);
                      if (std::abs(1.0 + bp.beta) < 1e-8) return kNegInf;
                      double ll = 0.0;
                      for (int a : involved) {
                        const auto& psi = est.auctions.at(panel.traces[a].auction_id);
                        ll += valuation_loglik_cached(
                            caches[a], est.bidders, psi.sigma_zeta2, psi.sigma_xi2,
                            default_level_prior(panel.traces[a]), id, &bp);
                      }
                      Vector bv = detail::bidder_to_vec(bp);
                      for (int c = 0; c < 4; ++c)
                        ll += normal_logpdf(bv(c), fitted(c), sig2(c));
                      return std::isfinite(ll) ? ll : kNegInf;
                    },
                    4};

      const auto& bp0 = est.bidders.at(id);
      Vector start(4);
      start << bp0.alpha, bp0.beta, std::log(bp0.delta), std::log(bp0.rho + 1e-8);
      SAConfig sa = cfg.sa_bidder;
      sa.seed = cfg.seed + 0x200000 + static_cast<std::uint64_t>(id) * 7919 +
                static_cast<std::uint64_t>(round);
      BidderParams bp = bp0;
      try {
        auto res = simulated_annealing(obj, start, sa);
        bp.alpha = res.x(0);
        bp.beta = res.x(1);
        bp.delta = std::exp(res.x(2));
        bp.rho = std::max(0.0, std::exp(res.x(3)) - 1e-8);
      } catch (const std::exception&) {
        // keep the current parameters if the block cannot be searched
      }
      new_thetas[i] = bp;
    });
    for (std::size_t i = 0; i < ids.size(); ++i) est.bidders[ids[i]] = new_thetas[i];

    double updated = posterior(est.bidders, est.auctions);
    est.objective_trace.push_back(updated);
    current = updated;

    Vector packed = pack_all();
    double step = (packed - prev_params).norm();
    prev_params = packed;
    if (step < cfg.mcem.tolerance) break;
  }

  est.parts = assemble_log_posterior(panel, est.bidders, est.auctions, bidder_segment,
                                     n_segments, auction_cluster, n_clusters, cfg.ev,
                                     cfg.hier_floor);
  return est;
}

}  // namespace structest
