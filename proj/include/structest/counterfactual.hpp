#pragma once

#include <map>
#include <string>
#include <vector>

#include "structest/auction.hpp"
#include "structest/choice_designs.hpp"
#include "structest/dp_mixlogit.hpp"
#include "structest/optim.hpp"
#include "structest/proxy.hpp"

namespace structest {

// Monotone per-category social-influence path.
struct InfluencePolicy {
  Matrix path;  // J x T, non-decreasing along t

  void validate() const {
    for (int j = 0; j < path.rows(); ++j)
      for (int t = 1; t < path.cols(); ++t)
        require(path(j, t) >= path(j, t - 1) - 1e-12,
                "policy: path must be non-decreasing");
  }
};

struct CounterfactualRow {
  std::string label;
  double baseline = 0.0;
  double scenario = 0.0;
  double delta() const { return scenario - baseline; }
};

struct CounterfactualReport {
  double baseline = 0.0;
  double scenario = 0.0;
  std::vector<CounterfactualRow> breakdown;

  double absolute_delta() const { return scenario - baseline; }
  double relative_delta() const {
    return baseline != 0.0 ? (scenario - baseline) / baseline : 0.0;
  }
};

// Per-unit posterior coefficients plus the panel designs they apply to.
struct ChoiceFit {
  std::vector<UnitData> units;         // multinomial, app-panel layout
  std::vector<Vector> coefficients;    // aligned with units
  int categories = 0;
  int influence_col = 0;               // column of c_imm in the design
};

namespace detail {

// Expected inside-choice probability per category under a full influence path
// override (empty path = keep the design as built).
inline Vector expected_adoptions_by_category(const ChoiceFit& fit,
                                             const Matrix& path_override,
                                             double scale_factor = 1.0) {
  Vector totals = Vector::Zero(fit.categories);
  for (std::size_t i = 0; i < fit.units.size(); ++i) {
    const auto& unit = fit.units[i];
    for (std::size_t t = 0; t < unit.designs.size(); ++t) {
      Matrix x = unit.designs[t];
      for (int j = 0; j < fit.categories; ++j) {
        if (path_override.size() > 0)
          x(j, fit.influence_col) = path_override(j, static_cast<int>(t));
        x(j, fit.influence_col) *= scale_factor;
      }
      Vector probs = logit_probs(x * fit.coefficients[i]);
      totals += probs.tail(fit.categories);
    }
  }
  return totals;
}

}  // namespace detail

// Search for the monotone influence path maximizing total expected inside
// adoptions; the path is parameterized by log increments so every candidate
// is feasible by construction. The baseline path seeds the search, which
// keeps the returned objective at or above the baseline.
inline std::pair<InfluencePolicy, CounterfactualReport> optimal_social_influence(
    const ChoiceFit& fit, const Matrix& baseline_path, double upper_bound,
    const GAConfig& ga_cfg) {
  require(!fit.units.empty(), "counterfactual: empty fit");
  const int j_n = fit.categories;
  const int t_n = static_cast<int>(baseline_path.cols());
  require(baseline_path.rows() == j_n, "counterfactual: baseline path rows");
  require(upper_bound >= baseline_path.maxCoeff(),
          "counterfactual: infeasible bounds");

  auto decode = [&](const Vector& u) {
    Matrix path(j_n, t_n);
    for (int j = 0; j < j_n; ++j) {
      double level = 0.0;
      for (int t = 0; t < t_n; ++t) {
        level = std::min(level + std::exp(u(j * t_n + t)), upper_bound);
        path(j, t) = level;
      }
    }
    return path;
  };

  Objective obj{[&](const Vector& u) {
                  return detail::expected_adoptions_by_category(fit, decode(u)).sum();
                },
                j_n * t_n};

  // Encode the baseline as increments for the seed member.
  Vector seed(j_n * t_n);
  for (int j = 0; j < j_n; ++j) {
    double prev = 0.0;
    for (int t = 0; t < t_n; ++t) {
      double inc = std::max(baseline_path(j, t) - prev, 1e-9);
      seed(j * t_n + t) = std::log(inc);
      prev = baseline_path(j, t);
    }
  }
  auto res = genetic_optimize(obj, {seed}, ga_cfg);

  InfluencePolicy policy;
  policy.path = decode(res.x);
  policy.validate();

  Vector base_cat = detail::expected_adoptions_by_category(fit, baseline_path);
  Vector new_cat = detail::expected_adoptions_by_category(fit, policy.path);
  CounterfactualReport report;
  report.baseline = base_cat.sum();
  report.scenario = new_cat.sum();
  for (int j = 0; j < j_n; ++j)
    report.breakdown.push_back(
        {"category_" + std::to_string(j + 1), base_cat(j), new_cat(j)});
  return {policy, report};
}

// Scale the social-influence covariate by a factor and recompute expected
// adoptions; factor 0 is equivalent to dropping the covariate.
inline CounterfactualReport perturb_social_influence(const ChoiceFit& fit,
                                                     double factor) {
  Vector base_cat = detail::expected_adoptions_by_category(fit, Matrix());
  Vector new_cat = detail::expected_adoptions_by_category(fit, Matrix(), factor);
  CounterfactualReport report;
  report.baseline = base_cat.sum();
  report.scenario = new_cat.sum();
  for (int j = 0; j < fit.categories; ++j)
    report.breakdown.push_back(
        {"category_" + std::to_string(j + 1), base_cat(j), new_cat(j)});
  return report;
}

// ---------------------------------------------------------------------------
// Regret shutdown with sequential bid re-optimization
// ---------------------------------------------------------------------------

enum class ShutdownMode { winner, both };

struct RegretShutdownResult {
  CounterfactualReport report;           // winning bids, per-auction breakdown
  std::vector<std::vector<double>> simulated_bids;  // per auction, entry order
  std::vector<int> excluded_auctions;    // loser-regret singularity under winner mode
};

// Replay each auction: at every original bid epoch the bidder re-optimizes
// her bid under the modified regret parameters against beliefs filtered on
// the simulated bids, with her valuation held at the baseline model-implied
// value. The simulated board state feeds the sequential replay throughout.
inline RegretShutdownResult regret_shutdown(const AuctionPanel& panel,
                                            const AuctionEstimates& estimates,
                                            ShutdownMode mode,
                                            const ProxyAuctionConfig& proxy_cfg = {},
                                            const ExpectedValuationConfig& ev = {}) {
  RegretShutdownResult out;
  double base_total = 0.0, scen_total = 0.0;

  // Belief a bidder holds before epoch t given a bid history: filter over the
  // sorted prefix, diffuse around the reserve before any bid exists.
  auto belief_at = [&](const std::vector<double>& history, const AuctionParams& psi,
                       int count) {
    MaxBidBelief belief;
    if (history.empty()) {
      belief.mean = proxy_cfg.reserve;
      belief.var = std::max(proxy_cfg.reserve * proxy_cfg.reserve * 0.25, 1.0);
    } else {
      std::vector<double> sorted = history;
      std::sort(sorted.begin(), sorted.end());
      auto bf = filter_bids(sorted, psi);
      belief.mean = bf.pred_mean.back();
      belief.var = std::max(bf.pred_var.back() + psi.sigma_v, 1e-6);
    }
    belief.n_t = std::max(2, count);
    return belief;
  };

  for (const auto& trace : panel.traces) {
    const auto& psi = estimates.auctions.at(trace.auction_id);

    bool excluded = false;
    if (mode == ShutdownMode::winner) {
      for (int id : trace.bidder_ids) {
        if (std::abs(1.0 + estimates.bidders.at(id).beta) < 1e-6) {
          excluded = true;
          break;
        }
      }
    }
    if (excluded) {
      out.excluded_auctions.push_back(trace.auction_id);
      out.simulated_bids.emplace_back();
      continue;
    }

    // Baseline model-implied valuations: invert each observed bid against the
    // beliefs the bidder held on the observed path. Held fixed across the
    // scenario replay.
    std::vector<double> valuation_at_epoch(trace.n_bids());
    {
      std::vector<double> history;
      for (int t = 0; t < trace.n_bids(); ++t) {
        const auto& bp = estimates.bidders.at(trace.bidder_ids[t]);
        auto dist = max_bid_dist(belief_at(history, psi, trace.cum_bidders[t]));
        valuation_at_epoch[t] =
            foc_valuation(trace.bids[t], dist, bp.alpha, bp.beta);
        history.push_back(trace.bids[t]);
      }
    }

    std::vector<double> sim_bids;
    double board = proxy_cfg.reserve;
    double winning = 0.0;
    for (int t = 0; t < trace.n_bids(); ++t) {
      const auto& bp = estimates.bidders.at(trace.bidder_ids[t]);
      double alpha = 0.0;
      double beta = mode == ShutdownMode::both ? 0.0 : bp.beta;

      auto dist = max_bid_dist(belief_at(sim_bids, psi, trace.cum_bidders[t]));
      double v = valuation_at_epoch[t];
      double lo = std::min(board, v) - 2.0 * dist.sd;
      double hi = std::max(v + 3.0 * dist.sd, board + proxy_cfg.increment);
      double bid = numeric_argmax_1d(
          [&](double b) { return bidder_utility(b, v, dist, alpha, beta); }, lo, hi,
          1e-8);
      sim_bids.push_back(bid);
      winning = std::max(winning, bid);

      auto outcome = proxy_bid_engine(sim_bids, proxy_cfg);
      if (!outcome.board.empty()) board = std::max(board, outcome.board.back());
    }

    double base_winning = *std::max_element(trace.bids.begin(), trace.bids.end());
    base_total += base_winning;
    scen_total += winning;
    out.report.breakdown.push_back({"auction_" + std::to_string(trace.auction_id),
                                    base_winning, winning});
    out.simulated_bids.push_back(std::move(sim_bids));
  }
  out.report.baseline = base_total;
  out.report.scenario = scen_total;
  return out;
}

// ---------------------------------------------------------------------------
// Badge perturbations
// ---------------------------------------------------------------------------

enum class BadgeScenario {
  null_scenario,
  scale_all,             // multiply every badge column by the factor
  scale_gold,
  scale_silver_bronze,
  shutdown_all,
  shutdown_gold,
  shutdown_silver_bronze
};

struct GamificationFit {
  std::vector<UnitData> units;       // binomial, 14-column layout
  std::vector<Vector> coefficients;  // aligned with units
};

namespace detail {

// Design columns: bdg (gold, silver, bronze) at 8..10, cbdg at 11..13.
inline void apply_badge_scenario(Matrix& design, BadgeScenario scenario,
                                 double factor) {
  auto scale_cols = [&](std::initializer_list<int> cols, double f) {
    for (int c : cols) design.col(c) *= f;
  };
  switch (scenario) {
    case BadgeScenario::null_scenario:
      break;
    case BadgeScenario::scale_all:
      scale_cols({8, 9, 10, 11, 12, 13}, factor);
      break;
    case BadgeScenario::scale_gold:
      scale_cols({8, 11}, factor);
      break;
    case BadgeScenario::scale_silver_bronze:
      scale_cols({9, 10, 12, 13}, factor);
      break;
    case BadgeScenario::shutdown_all:
      scale_cols({8, 9, 10, 11, 12, 13}, 0.0);
      break;
    case BadgeScenario::shutdown_gold:
      scale_cols({8, 11}, 0.0);
      break;
    case BadgeScenario::shutdown_silver_bronze:
      scale_cols({9, 10, 12, 13}, 0.0);
      break;
  }
}

}  // namespace detail

// Expected total contributions (sum of predicted probability times trials)
// under a badge-column perturbation, with a per-user breakdown.
inline CounterfactualReport badge_counterfactual(const GamificationFit& fit,
                                                 BadgeScenario scenario,
                                                 double factor = 1.0) {
  CounterfactualReport report;
  for (std::size_t i = 0; i < fit.units.size(); ++i) {
    const auto& unit = fit.units[i];
    Matrix base_design = unit.bin_design;
    Matrix scen_design = unit.bin_design;
    detail::apply_badge_scenario(scen_design, scenario, factor);

    double base = 0.0, scen = 0.0;
    for (int t = 0; t < base_design.rows(); ++t) {
      double vb = base_design.row(t).dot(fit.coefficients[i]);
      double vs = scen_design.row(t).dot(fit.coefficients[i]);
      base += unit.trials[t] / (1.0 + std::exp(-vb));
      scen += unit.trials[t] / (1.0 + std::exp(-vs));
    }
    report.baseline += base;
    report.scenario += scen;
    report.breakdown.push_back({"user_" + std::to_string(unit.id), base, scen});
  }
  return report;
}

}  // namespace structest
