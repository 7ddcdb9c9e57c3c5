#include "structest/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

using namespace structest;

TEST_CASE("proxy golden trace: (50, 40, 70, 65) at reserve 25, increment 1") {
  auto outcome = proxy_bid_engine({50.0, 40.0, 70.0, 65.0}, {25.0, 1.0});
  REQUIRE(outcome.board == std::vector<double>{25.0, 41.0, 51.0, 66.0});
  CHECK(outcome.winner == 2);
  CHECK(outcome.price == 66.0);
}

TEST_CASE("single bidder pays the reserve") {
  auto outcome = proxy_bid_engine({50.0}, {25.0, 1.0});
  REQUIRE(outcome.board == std::vector<double>{25.0});
  CHECK(outcome.winner == 0);
  CHECK(outcome.price == 25.0);
}

TEST_CASE("equal proxies: first in time wins at its own amount") {
  auto outcome = proxy_bid_engine({60.0, 60.0}, {25.0, 1.0});
  CHECK(outcome.winner == 0);
  CHECK(outcome.price == 60.0);  // second-highest + increment capped at the proxy
}

namespace {

// Independent oracle: re-simulate the board holding a visible second-highest
// tracker, written without reference to the engine.
struct OracleResult {
  std::vector<double> board;
  int winner;
  double price;
};

OracleResult proxy_oracle(const std::vector<double>& proxies, double reserve,
                          double increment) {
  OracleResult res;
  res.winner = -1;
  res.price = 0.0;
  double best = -1.0, second_best = -1.0;
  int best_idx = -1;
  double shown = reserve;
  for (std::size_t i = 0; i < proxies.size(); ++i) {
    double p = proxies[i];
    if (best_idx >= 0 && p < shown) continue;
    if (best_idx < 0 && p < reserve) continue;
    if (p > best) {
      second_best = best;
      best = p;
      best_idx = static_cast<int>(i);
    } else if (p > second_best) {
      second_best = p;
    }
    shown = second_best < 0 ? reserve : std::min(second_best + increment, best);
    res.board.push_back(shown);
  }
  res.winner = best_idx;
  res.price = second_best < 0 ? reserve : std::min(second_best + increment, best);
  return res;
}

}  // namespace

TEST_CASE("engine board equals the second-highest tracker oracle on permutations") {
  std::vector<double> amounts = {40.0, 55.0, 55.0};
  std::sort(amounts.begin(), amounts.end());
  do {
    auto engine = proxy_bid_engine(amounts, {25.0, 1.0});
    auto oracle = proxy_oracle(amounts, 25.0, 1.0);
    REQUIRE(engine.board == oracle.board);
    REQUIRE(engine.winner == oracle.winner);
    REQUIRE(engine.price == oracle.price);
  } while (std::next_permutation(amounts.begin(), amounts.end()));

  // a second multiset including a below-reserve entry
  std::vector<double> mixed = {20.0, 30.0, 45.0};
  std::sort(mixed.begin(), mixed.end());
  do {
    auto engine = proxy_bid_engine(mixed, {25.0, 1.0});
    auto oracle = proxy_oracle(mixed, 25.0, 1.0);
    REQUIRE(engine.board == oracle.board);
    REQUIRE(engine.winner == oracle.winner);
  } while (std::next_permutation(mixed.begin(), mixed.end()));
}

TEST_CASE("board is always non-decreasing and invalid bids are flagged") {
  auto outcome = proxy_bid_engine({50.0, 30.0, 20.0, 80.0, 10.0}, {25.0, 1.0});
  for (std::size_t i = 1; i < outcome.board.size(); ++i)
    CHECK(outcome.board[i] >= outcome.board[i - 1]);
  CHECK(outcome.valid == std::vector<bool>{true, true, false, true, false});
}

TEST_CASE("gen_diffusion: noiseless path matches the recursion and seeds repeat") {
  SegmentedDiffusionParams p;
  p.p_inf = 0.1;
  p.q_inf = 0.05;
  p.p_imm = 0.2;
  p.q_imm = 0.1;
  p.m_inf = 100.0;
  p.m_imm = 900.0;
  p.w = 0.3;
  p.theta = 0.2;
  JointDiffusionModel model;
  model.params = {p};
  model.state_noise_factor = Matrix::Identity(2, 2) * 2.0;
  model.obs_noise = Vector::Constant(1, 4.0);
  model.pop = Matrix::Zero(1, 0);

  auto a = gen_diffusion(model, 50, 3);
  auto b = gen_diffusion(model, 50, 3);
  REQUIRE(a.y == b.y);

  auto clean = gen_diffusion(model, 50, 3, true);
  Vector state = Vector::Zero(2);
  for (int t = 0; t < 50; ++t) {
    state = model.transition(state);
    CHECK(clean.c_inf(0, t) == Catch::Approx(state(0)).margin(1e-10));
    CHECK(clean.c_imm(0, t) == Catch::Approx(state(1)).margin(1e-10));
  }
}

namespace {

Matrix random_design(int, int, Rng& rng) {
  Matrix x(3, 2);
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 2; ++c) x(j, c) = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("gen_choice_panel: deterministic-utility limit picks the argmax") {
  std::vector<Vector> means = {Vector::Constant(2, 100.0)};  // near-deterministic
  auto out = gen_choice_panel(means, Vector::Constant(1, 1.0), 0.0, random_design, 5,
                              20, 7);
  for (const auto& unit : out.panel) {
    for (std::size_t t = 0; t < unit.choices.size(); ++t) {
      Vector v = unit.designs[t] * out.unit_truth[unit.id];
      int arg = 0;
      double best = 0.0;  // outside utility
      for (int j = 0; j < v.size(); ++j)
        if (v(j) > best) {
          best = v(j);
          arg = j + 1;
        }
      CHECK(unit.choices[t] == arg);
    }
  }
}

TEST_CASE("gen_choice_panel: zero coefficients give roughly uniform shares") {
  std::vector<Vector> means = {Vector::Zero(2)};
  auto out = gen_choice_panel(means, Vector::Constant(1, 1.0), 0.0, random_design,
                              200, 50, 11);
  std::vector<int> counts(4, 0);
  int total = 0;
  for (const auto& unit : out.panel)
    for (int c : unit.choices) {
      ++counts[c];
      ++total;
    }
  for (int j = 0; j < 4; ++j) {
    double share = static_cast<double>(counts[j]) / total;
    CHECK(std::abs(share - 0.25) < 0.02);  // ~3 SEs at 10k draws
  }
}

TEST_CASE("gen_choice_panel: observed shares track averaged logit probabilities") {
  std::vector<Vector> means = {Vector::Constant(2, 0.5)};
  auto out = gen_choice_panel(means, Vector::Constant(1, 1.0), 0.0, random_design,
                              300, 40, 13);
  double expected_outside = 0.0, observed_outside = 0.0;
  long total = 0;
  for (const auto& unit : out.panel) {
    for (std::size_t t = 0; t < unit.choices.size(); ++t) {
      Vector probs = logit_probs(unit.designs[t] * out.unit_truth[unit.id]);
      expected_outside += probs(0);
      observed_outside += unit.choices[t] == 0 ? 1.0 : 0.0;
      ++total;
    }
  }
  double diff = std::abs(expected_outside - observed_outside) / total;
  CHECK(diff < 3.0 * 0.5 / std::sqrt(static_cast<double>(total)));
}

TEST_CASE("gen_auction: bids satisfy the first-order condition") {
  AuctionGenConfig cfg = default_auction_gen();
  cfg.n_auctions = 2;
  cfg.bidders_per_auction = 4;
  cfg.bids_per_bidder = 5;
  cfg.seed = 5;
  auto out = gen_auction(cfg);
  REQUIRE(out.panel.traces.size() == 2);
  for (const auto& trace : out.panel.traces) {
    trace.validate();
    CHECK(trace.n_bids() == 20);
  }
  // Internal consistency spot check: regenerate the belief at the final epoch
  // of the first auction and confirm the FOC identity at the recorded bid.
  const auto& trace = out.panel.traces[0];
  const auto& psi = out.auction_truth.at(0);
  std::vector<double> prior_bids(trace.bids.begin(), trace.bids.end() - 1);
  std::sort(prior_bids.begin(), prior_bids.end());
  auto bf = filter_bids(prior_bids, psi);
  MaxBidBelief belief;
  belief.mean = bf.pred_mean.back();
  belief.var = bf.pred_var.back() + psi.sigma_v;
  belief.n_t = 2;  // any n >= 2: the identity is checked at the stored bid
  // The generated bid solves v = b + r G/g for the bidder's v; verify the
  // round trip through solve_foc_bid.
  const auto& bp = out.bidder_truth.at(trace.bidder_ids.back());
  auto dist = max_bid_dist(belief);
  double b = trace.bids.back();
  double v_implied = b + regret_ratio(bp) * dist.cdf(b) / dist.pdf(b);
  double b_back = solve_foc_bid(v_implied, dist, regret_ratio(bp));
  CHECK(b_back == Catch::Approx(b).margin(1e-6));
}

TEST_CASE("gen_auction is reproducible and reports redraws") {
  AuctionGenConfig cfg = default_auction_gen();
  cfg.n_auctions = 3;
  cfg.bidders_per_auction = 3;
  cfg.bids_per_bidder = 4;
  cfg.seed = 17;
  auto a = gen_auction(cfg);
  auto b = gen_auction(cfg);
  REQUIRE(a.panel.traces.size() == b.panel.traces.size());
  for (std::size_t i = 0; i < a.panel.traces.size(); ++i)
    REQUIRE(a.panel.traces[i].bids == b.panel.traces[i].bids);
  CHECK(a.redraw_count == b.redraw_count);
}

TEST_CASE("gen_auction: average bids per bidder is configurable") {
  AuctionGenConfig cfg = default_auction_gen();
  cfg.n_auctions = 2;
  cfg.bidders_per_auction = 5;
  cfg.bids_per_bidder = 5;  // close to the reported 4.84 average
  cfg.seed = 23;
  auto out = gen_auction(cfg);
  for (const auto& trace : out.panel.traces) {
    std::map<int, int> per_bidder;
    for (int id : trace.bidder_ids) ++per_bidder[id];
    for (const auto& [id, n] : per_bidder) CHECK(n == 5);
  }
}

TEST_CASE("gen_gamification: badges are ordered, unique, and reproducible") {
  GamificationGenConfig cfg;
  cfg.users = 12;
  cfg.days = 200;
  cfg.seed = 3;
  std::vector<Vector> truth;
  for (int u = 0; u < cfg.users; ++u) {
    Vector lam = Vector::Zero(14);
    lam(0) = 1.5;  // active users so thresholds get crossed
    truth.push_back(lam);
  }
  auto out = gen_gamification(truth, cfg);
  auto out2 = gen_gamification(truth, cfg);
  REQUIRE(out.activity.size() == out2.activity.size());
  REQUIRE(out.badges.size() == out2.badges.size());

  std::map<int, std::vector<BadgeEvent>> by_user;
  for (const auto& b : out.badges) by_user[b.user_id].push_back(b);
  for (const auto& [u, events] : by_user) {
    int bronze = 0, silver = 0, gold = 0;
    int bronze_day = 0, silver_day = 0;
    for (const auto& b : events) {
      if (b.level == BadgeLevel::bronze) {
        ++bronze;
        bronze_day = b.day;
      } else if (b.level == BadgeLevel::silver) {
        ++silver;
        silver_day = b.day;
      } else {
        ++gold;
      }
    }
    CHECK(bronze <= 1);
    CHECK(silver <= 1);
    CHECK(gold <= 1);
    if (silver == 1) {
      REQUIRE(bronze == 1);
      CHECK(bronze_day <= silver_day);  // bronze crossed first
    }
  }
}

TEST_CASE("gen_gamification: zero-activity users earn nothing and stay unranked") {
  GamificationGenConfig cfg;
  cfg.users = 5;
  cfg.days = 60;
  cfg.reciprocity_rate = 0.0;
  cfg.seed = 9;
  std::vector<Vector> truth;
  for (int u = 0; u < cfg.users; ++u) {
    Vector lam = Vector::Zero(14);
    lam(0) = -50.0;  // never contributes
    truth.push_back(lam);
  }
  auto out = gen_gamification(truth, cfg);
  CHECK(out.activity.empty());
  CHECK(out.badges.empty());
  CHECK(out.leaderboard.empty());
}

TEST_CASE("gen_gamification: leaderboard ranks follow cumulative score order") {
  GamificationGenConfig cfg;
  cfg.users = 10;
  cfg.days = 100;
  cfg.leaderboard_cutoff = 0.0;
  cfg.seed = 21;
  std::vector<Vector> truth;
  for (int u = 0; u < cfg.users; ++u) {
    Vector lam = Vector::Zero(14);
    lam(0) = u < 5 ? 2.0 : -1.0;  // heterogeneous activity
    truth.push_back(lam);
  }
  auto out = gen_gamification(truth, cfg);
  std::map<int, std::vector<LeaderboardEntry>> by_week;
  for (const auto& e : out.leaderboard) by_week[e.week].push_back(e);
  for (const auto& [week, entries] : by_week) {
    std::vector<LeaderboardEntry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.rank < b.rank; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      bool ordered = sorted[i - 1].reputation > sorted[i].reputation ||
                     (sorted[i - 1].reputation == sorted[i].reputation &&
                      sorted[i - 1].user_id < sorted[i].user_id);
      CHECK(ordered);
    }
  }
}
