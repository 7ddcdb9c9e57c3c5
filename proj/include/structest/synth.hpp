#pragma once

#include <map>
#include <vector>

#include "structest/auction.hpp"
#include "structest/choice_designs.hpp"
#include "structest/diffusion.hpp"
#include "structest/dp_mixlogit.hpp"
#include "structest/proxy.hpp"
#include "structest/rng.hpp"

namespace structest {

// ---------------------------------------------------------------------------
// Diffusion data
// ---------------------------------------------------------------------------

inline DiffusionSim gen_diffusion(const JointDiffusionModel& model, int days,
                                  std::uint64_t seed, bool noiseless = false) {
  return simulate_diffusion(model, days, seed, noiseless);
}

// ---------------------------------------------------------------------------
// Choice panel with a planted finite mixture of coefficient vectors
// ---------------------------------------------------------------------------

struct ChoicePanelTruth {
  std::vector<UnitData> panel;
  std::vector<Vector> unit_truth;
  std::vector<int> component;  // planted mixture component per unit
};

inline ChoicePanelTruth gen_choice_panel(
    const std::vector<Vector>& component_means, const Vector& weights,
    double within_sd,
    const std::function<Matrix(int unit, int week, Rng&)>& design_fn, int units,
    int periods, std::uint64_t seed) {
  require(!component_means.empty(), "gen_choice_panel: needs mixture components");
  require(weights.size() == static_cast<int>(component_means.size()),
          "gen_choice_panel: weights/components mismatch");
  require(std::abs(weights.sum() - 1.0) < 1e-10,
          "gen_choice_panel: weights must form a simplex");

  ChoicePanelTruth out;
  const int d = static_cast<int>(component_means.front().size());
  for (int i = 0; i < units; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    int comp = rng.categorical(weights);
    Vector truth = component_means[comp] + within_sd * rng.normal_vector(d);
    UnitData unit;
    unit.id = i;
    unit.mode = ChoiceMode::multinomial;
    for (int t = 0; t < periods; ++t) {
      Matrix x = design_fn(i, t, rng);
      Vector probs = logit_probs(x * truth);
      double u = rng.uniform();
      int choice = 0;
      double acc = 0.0;
      for (int j = 0; j < probs.size(); ++j) {
        acc += probs(j);
        if (u <= acc) {
          choice = j;
          break;
        }
      }
      unit.designs.push_back(x);
      unit.choices.push_back(choice);
    }
    unit.z = Vector::Constant(1, 1.0);
    out.panel.push_back(std::move(unit));
    out.unit_truth.push_back(truth);
    out.component.push_back(comp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Auction panel: internally consistent with the structural model, so the
// first-order-condition inversion is exact up to noise
// ---------------------------------------------------------------------------

struct AuctionGenConfig {
  int n_auctions = 40;
  int bidders_per_auction = 8;
  int bids_per_bidder = 6;
  int n_clusters = 2;
  int n_segments = 3;
  ProxyAuctionConfig proxy{25.0, 1.0};
  // Segment-level bidder truth; bidders draw their segment's parameters plus
  // noise. Defaults follow the reported parameter magnitudes.
  std::vector<BidderParams> segment_truth;
  double theta_noise_sd = 0.05;
  AuctionParams auction_truth;
  double common_value_start = 60.0;
  std::uint64_t seed = 0;
};

inline AuctionGenConfig default_auction_gen() {
  AuctionGenConfig cfg;
  BidderParams a;
  a.alpha = 1.28;
  a.beta = 1.34;
  a.delta = 1.22;
  a.rho = 0.27;
  BidderParams b = a;
  b.alpha = 0.9;
  b.beta = 1.1;
  BidderParams c = a;
  c.alpha = 1.6;
  c.beta = 1.55;
  cfg.segment_truth = {a, b, c};
  cfg.auction_truth.tau = 1.0;
  cfg.auction_truth.gamma = 2.0;
  cfg.auction_truth.iota = 1.0;
  cfg.auction_truth.eta = 0.15;
  cfg.auction_truth.sigma_v = 4.0;
  cfg.auction_truth.sigma_w = 4.0;
  cfg.auction_truth.sigma_zeta1 = 0.4;
  cfg.auction_truth.sigma_xi1 = 0.4;
  cfg.auction_truth.sigma_zeta2 = 0.01;
  cfg.auction_truth.sigma_xi2 = 0.01;
  return cfg;
}

struct AuctionGenResult {
  AuctionPanel panel;
  std::map<int, BidderParams> bidder_truth;
  std::map<int, AuctionParams> auction_truth;
  std::map<int, int> bidder_segment;
  std::map<int, int> auction_cluster;
  int redraw_count = 0;  // infeasible valuation draws that had to be redrawn
};

// Solve the first-order condition b + r G(b)/g(b) = v for the bid (monotone
// in b for r >= 0).
inline double solve_foc_bid(double v, const MaxBidDist& dist, double r) {
  double lo = dist.mean - 10.0 * dist.sd;
  double hi = v;
  if (hi <= lo) return hi;
  auto f = [&](double b) {
    return b + r * dist.cdf(b) / std::max(dist.pdf(b), 1e-300) - v;
  };
  if (f(hi) <= 0.0) return hi;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

inline AuctionGenResult gen_auction(const AuctionGenConfig& cfg) {
  require(!cfg.segment_truth.empty(), "gen_auction: needs segment truth");
  cfg.auction_truth.validate();
  AuctionGenResult out;

  int next_bidder = 0;
  for (int a = 0; a < cfg.n_auctions; ++a) {
    Rng rng = Rng::stream(cfg.seed, 0xA0000 + static_cast<std::uint64_t>(a));
    AuctionTrace trace;
    trace.auction_id = a;
    trace.cluster_id = a % cfg.n_clusters;

    AuctionParams psi = cfg.auction_truth;
    psi.gamma *= rng.uniform(0.8, 1.25);
    psi.iota *= rng.uniform(0.8, 1.25);
    out.auction_truth[a] = psi;
    out.auction_cluster[a] = trace.cluster_id;

    std::vector<int> participants;
    for (int b = 0; b < cfg.bidders_per_auction; ++b) {
      int id = next_bidder++;
      participants.push_back(id);
      int seg = id % cfg.n_segments;
      const auto& base = cfg.segment_truth[seg % cfg.segment_truth.size()];
      BidderParams bp = base;
      bp.alpha += cfg.theta_noise_sd * rng.normal();
      bp.beta += cfg.theta_noise_sd * rng.normal();
      bp.delta = std::max(0.1, bp.delta + cfg.theta_noise_sd * rng.normal());
      bp.rho = std::max(0.0, bp.rho + cfg.theta_noise_sd * rng.normal());
      out.bidder_truth[id] = bp;
      out.bidder_segment[id] = seg;
    }

    const int epochs = cfg.bidders_per_auction * cfg.bids_per_bidder;
    double theta_common = cfg.common_value_start * rng.uniform(0.8, 1.3);
    double kappa = 2.0;
    std::vector<double> proxies;
    double board = cfg.proxy.reserve;
    int recorded_count = 2;

    for (int t = 0; t < epochs; ++t) {
      int slot = t % cfg.bidders_per_auction;
      int id = participants[slot];
      const auto& bp = out.bidder_truth[id];

      theta_common *= std::exp(rng.normal(0.0, std::sqrt(psi.sigma_xi2)));
      kappa += psi.iota + psi.eta * (t + 1.0) +
               rng.normal(0.0, std::sqrt(psi.sigma_xi1));

      // Affiliated valuation; redraw the private shock if it lands below the
      // learning floor (margin must stay positive).
      double v = 0.0;
      for (int attempt = 0;; ++attempt) {
        double priv = rng.normal(0.0, std::sqrt(psi.sigma_zeta2));
        v = bp.rho * board + theta_common * bp.delta * std::exp(priv);
        if (v > bp.rho * board + 1e-9) break;
        ++out.redraw_count;
        if (attempt > 50) {
          v = bp.rho * board + theta_common * bp.delta;
          break;
        }
      }

      // Belief about the latent bid from the bids so far (the same filter the
      // estimation runs), with a broad prior before any bid exists.
      MaxBidBelief belief;
      if (proxies.empty()) {
        belief.mean = cfg.proxy.reserve;
        belief.var = cfg.proxy.reserve * cfg.proxy.reserve * 0.25;
      } else {
        std::vector<double> sorted = proxies;
        std::sort(sorted.begin(), sorted.end());
        auto bf = filter_bids(sorted, psi);
        belief.mean = bf.pred_mean.back();
        belief.var = bf.pred_var.back() + psi.sigma_v;
      }
      // The bidder conditions on the observed count n_t, which the trace
      // records; observation noise on the latent entrance state.
      double n_obs = kappa + rng.normal(0.0, std::sqrt(psi.sigma_zeta1));
      recorded_count =
          std::max(recorded_count, static_cast<int>(std::lround(n_obs)));
      belief.n_t = std::max(2, recorded_count);
      auto dist = max_bid_dist(belief);

      double bid = solve_foc_bid(v, dist, regret_ratio(bp));
      bid = std::max(bid, cfg.proxy.reserve);
      proxies.push_back(bid);

      trace.bids.push_back(bid);
      trace.bidder_ids.push_back(id);
      trace.board.push_back(board);
      trace.cum_bidders.push_back(recorded_count);
      trace.time_trend.push_back(t + 1.0);

      auto outcome = proxy_bid_engine(proxies, cfg.proxy);
      if (!outcome.board.empty()) board = std::max(board, outcome.board.back());
    }
    out.panel.traces.push_back(trace);
  }

  // Bidder covariates: leading one plus two noisy experience measures tied to
  // the segment id, giving the hierarchy something to project on.
  for (const auto& [id, seg] : out.bidder_segment) {
    Rng rng = Rng::stream(cfg.seed, 0xB0000 + static_cast<std::uint64_t>(id));
    Vector d(3);
    d << 1.0, seg + rng.uniform(-0.2, 0.2), rng.uniform(0.0, 1.0);
    out.panel.bidder_covariates[id] = d;
  }
  for (const auto& [id, cluster] : out.auction_cluster) {
    Vector d(2);
    d << 1.0, static_cast<double>(cluster);
    out.panel.auction_covariates[id] = d;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gamification event logs with known per-user coefficients
// ---------------------------------------------------------------------------

struct GamificationGenConfig {
  int users = 50;
  int days = 120;
  // Badge score thresholds: bronze, silver, gold.
  double bronze_threshold = 100.0;
  double silver_threshold = 400.0;
  double gold_threshold = 1000.0;
  double points_per_contribution = 10.0;
  double leaderboard_cutoff = 200.0;
  double reciprocity_rate = 0.3;  // chance of an incoming event per day
  std::uint64_t seed = 0;
};

struct GamificationGenResult {
  std::vector<ActivityEvent> activity;
  std::vector<LeaderboardEntry> leaderboard;
  std::vector<BadgeEvent> badges;
  std::map<int, Vector> unit_truth;  // coefficients on the 14-column design
  int days = 0;
};

inline GamificationGenResult gen_gamification(const std::vector<Vector>& user_truth,
                                              const GamificationGenConfig& cfg) {
  require(static_cast<int>(user_truth.size()) == cfg.users,
          "gen_gamification: one coefficient vector per user");
  require(cfg.bronze_threshold < cfg.silver_threshold &&
              cfg.silver_threshold < cfg.gold_threshold,
          "gen_gamification: thresholds must increase");

  GamificationGenResult out;
  out.days = cfg.days;
  const int weeks = (cfg.days + 6) / 7;

  std::vector<double> score(cfg.users, 0.0);
  std::vector<double> cum_contrib(cfg.users, 0.0);
  std::vector<double> cum_recv(cfg.users, 0.0);
  std::vector<Vector> bdg_yesterday(cfg.users, Vector::Zero(3));
  std::vector<Vector> cbdg(cfg.users, Vector::Zero(3));
  std::vector<char> has_bronze(cfg.users, 0), has_silver(cfg.users, 0),
      has_gold(cfg.users, 0);
  std::vector<double> weekly_points(cfg.users, 0.0);
  // leaderboard state from the previous published week
  std::map<int, std::map<int, LeaderboardEntry>> published;  // week -> user -> entry

  double cont_mean_estimate = 0.0;  // running mean proxy used during generation

  for (int u = 0; u < cfg.users; ++u) out.unit_truth[u] = user_truth[u];

  for (int day = 1; day <= cfg.days; ++day) {
    const int week = (day - 1) / 7 + 1;
    for (int u = 0; u < cfg.users; ++u) {
      Rng rng = Rng::stream(cfg.seed, (static_cast<std::uint64_t>(day) << 20) + u);

      Vector x(14);
      double crep = 0.0, rep = 0.0, rnk = 0.0, drnk = 0.0, on_board = 0.0;
      auto prev = published.find(week - 1);
      if (prev != published.end() && prev->second.count(u)) {
        const auto& e = prev->second.at(u);
        on_board = 1.0;
        crep = e.reputation;
        rep = e.weekly_reputation;
        rnk = e.rank;
        auto prev2 = published.find(week - 2);
        if (prev2 != published.end() && prev2->second.count(u))
          drnk = e.rank - prev2->second.at(u).rank;
      }
      x << 1.0, (cum_contrib[u] - cont_mean_estimate) / 100.0, cum_recv[u] / 100.0,
          crep, rep, rnk, drnk, on_board, bdg_yesterday[u](0), bdg_yesterday[u](1),
          bdg_yesterday[u](2), cbdg[u](0), cbdg[u](1), cbdg[u](2);

      double p = 1.0 / (1.0 + std::exp(-x.dot(user_truth[u])));
      bdg_yesterday[u] = Vector::Zero(3);
      if (rng.uniform() < p) {
        ActivityEvent ev;
        ev.user_id = u;
        ev.day = day;
        int pick = rng.uniform_int(3);
        ev.type = pick == 0 ? ActivityType::comment
                            : (pick == 1 ? ActivityType::post_answered
                                         : ActivityType::revision);
        ev.count = 1;
        out.activity.push_back(ev);
        cum_contrib[u] += 1.0;
        score[u] += cfg.points_per_contribution;
        weekly_points[u] += cfg.points_per_contribution;

        // Badge grants, exactly once per level, on the day the score crosses.
        auto grant = [&](char& has, double threshold, BadgeLevel level, int idx) {
          if (!has && score[u] >= threshold) {
            has = 1;
            BadgeEvent b;
            b.user_id = u;
            b.day = day;
            b.level = level;
            out.badges.push_back(b);
            bdg_yesterday[u](idx) += 1.0;
            cbdg[u](idx) += 1.0;
          }
        };
        grant(has_bronze[u], cfg.bronze_threshold, BadgeLevel::bronze, 2);
        grant(has_silver[u], cfg.silver_threshold, BadgeLevel::silver, 1);
        grant(has_gold[u], cfg.gold_threshold, BadgeLevel::gold, 0);
      }
      if (rng.uniform() < cfg.reciprocity_rate) {
        ActivityEvent ev;
        ev.user_id = u;
        ev.day = day;
        int pick = rng.uniform_int(3);
        ev.type = pick == 0 ? ActivityType::accepted
                            : (pick == 1 ? ActivityType::review
                                         : ActivityType::post_asked);
        ev.count = 1;
        out.activity.push_back(ev);
        cum_recv[u] += 1.0;
      }
    }

    // Publish the leaderboard at the end of each week: ranks follow the
    // cumulative score ordering among users above the cutoff, ties stable by
    // user id.
    if (day % 7 == 0 || day == cfg.days) {
      std::vector<int> eligible;
      for (int u = 0; u < cfg.users; ++u)
        if (score[u] >= cfg.leaderboard_cutoff) eligible.push_back(u);
      std::stable_sort(eligible.begin(), eligible.end(), [&](int a, int b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
      });
      for (std::size_t r = 0; r < eligible.size(); ++r) {
        LeaderboardEntry e;
        e.user_id = eligible[r];
        e.week = week;
        e.reputation = score[eligible[r]];
        e.weekly_reputation = weekly_points[eligible[r]];
        e.rank = static_cast<int>(r) + 1;
        published[week][e.user_id] = e;
        out.leaderboard.push_back(e);
      }
      for (int u = 0; u < cfg.users; ++u) weekly_points[u] = 0.0;
    }
  }
  return out;
}

}  // namespace structest
