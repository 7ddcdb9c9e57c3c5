#include "structest/choice_designs.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace structest;

namespace {

Matrix flat_factors(int categories, int weeks, int m) {
  return Matrix::Zero(categories * weeks, m);
}

}  // namespace

TEST_CASE("download history state follows the increment rule") {
  // downloads in weeks 2 and 5 of 6 -> s = (0,0,1,1,1,2)
  std::vector<DownloadEvent> events = {{7, 2, 1}, {7, 5, 3}};
  Matrix influence = Matrix::Zero(3, 6);
  auto panel = build_app_panel(events, influence, flat_factors(3, 6, 3),
                               InfluenceSource::local_imitators, 3, 6, {{7, 100.0}});
  REQUIRE(panel.rows.size() == 6);
  std::vector<double> s;
  for (const auto& row : panel.rows) s.push_back(row.s_it);
  CHECK(s == std::vector<double>{0, 0, 1, 1, 1, 2});
  CHECK(panel.rows[1].chosen == 1);
  CHECK(panel.rows[4].chosen == 3);
  CHECK(panel.rows[0].tenure == 100.0);
}

TEST_CASE("no events yields no unit rows") {
  auto panel = build_app_panel({}, Matrix::Zero(2, 4), flat_factors(2, 4, 2),
                               InfluenceSource::none, 2, 4, {});
  CHECK(panel.rows.empty());
}

TEST_CASE("influence source none drops the covariate column") {
  std::vector<DownloadEvent> events = {{1, 1, 1}};
  Matrix influence = Matrix::Constant(2, 3, 9.0);
  auto with = build_app_panel(events, influence, flat_factors(2, 3, 2),
                              InfluenceSource::global_adopters, 2, 3, {});
  auto without = build_app_panel(events, influence, flat_factors(2, 3, 2),
                                 InfluenceSource::none, 2, 3, {});
  auto units_with = app_panel_units(with);
  auto units_without = app_panel_units(without);
  REQUIRE(units_with.size() == 1);
  REQUIRE(units_without.size() == 1);
  CHECK(units_with[0].dim() == units_without[0].dim() + 1);
  // identical rows minus the influence column
  CHECK(units_with[0].choices == units_without[0].choices);
}

TEST_CASE("unknown category is rejected with the row index") {
  std::vector<DownloadEvent> events = {{1, 1, 1}, {2, 1, 9}};
  try {
    build_app_panel(events, Matrix::Zero(2, 2), flat_factors(2, 2, 1),
                    InfluenceSource::none, 2, 2, {});
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("event 1") != std::string::npos);
    CHECK(msg.find("9") != std::string::npos);
  }
}

TEST_CASE("panel rebuild is bit-identical") {
  std::vector<DownloadEvent> events = {{1, 1, 2}, {1, 4, 1}, {2, 2, 2}};
  Matrix influence(2, 5);
  for (int j = 0; j < 2; ++j)
    for (int w = 0; w < 5; ++w) influence(j, w) = j + 0.1 * w;
  auto a = build_app_panel(events, influence, flat_factors(2, 5, 2),
                           InfluenceSource::local_adopters, 2, 5, {});
  auto b = build_app_panel(events, influence, flat_factors(2, 5, 2),
                           InfluenceSource::local_adopters, 2, 5, {});
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].s_it == b.rows[i].s_it);
    CHECK(a.rows[i].c_imm == b.rows[i].c_imm);
  }
}

TEST_CASE("gamification: silver badge on day 9 appears in the day-10 row") {
  std::vector<BadgeEvent> badges = {{5, 9, BadgeLevel::silver}};
  auto panel = build_gamification_panel({}, {}, badges, 14);
  for (const auto& row : panel.rows) {
    if (row.user_id != 5) continue;
    if (row.day == 10) {
      CHECK(row.bdg_lag(1) == 1.0);
      CHECK(row.cbdg_lag(1) == 1.0);
    } else if (row.day < 10) {
      CHECK(row.bdg_lag(1) == 0.0);
      CHECK(row.cbdg_lag(1) == 0.0);
    } else {
      CHECK(row.bdg_lag(1) == 0.0);   // instant state lasts one day
      CHECK(row.cbdg_lag(1) == 1.0);  // cumulative persists
    }
  }
}

TEST_CASE("gamification: zero-activity user has constant zero states") {
  std::vector<ActivityEvent> activity = {{1, 3, ActivityType::comment, 1}};
  auto panel = build_gamification_panel(activity, {}, {}, 10);
  // user 1 appears; craft a silent user via the leaderboard only
  std::vector<LeaderboardEntry> board = {{2, 1, 0.0, 0.0, 5}};
  auto panel2 = build_gamification_panel(activity, board, {}, 10);
  int seen = 0;
  for (const auto& row : panel2.rows) {
    if (row.user_id != 2) continue;
    ++seen;
    CHECK(row.y == 0);
    CHECK(row.rcv_lag == 0.0);
    CHECK(row.bdg_lag.sum() == 0.0);
    // demeaning shifts the cumulative state by a constant
    CHECK(row.cont_lag == Catch::Approx(-panel2.cont_mean / 100.0));
  }
  CHECK(seen == 9);  // days 2..10
}

TEST_CASE("rank drop from 120 to 100 shows as -20 in week 5 rows") {
  std::vector<LeaderboardEntry> board = {{1, 3, 500.0, 50.0, 120},
                                         {1, 4, 600.0, 60.0, 100}};
  auto panel = build_gamification_panel({}, board, {}, 35);
  for (const auto& row : panel.rows) {
    int week = (row.day - 1) / 7 + 1;
    if (week == 5) {
      CHECK(row.rnk_lag == 100.0);
      CHECK(row.drnk_lag == -20.0);
      CHECK(row.on_board == 1.0);
    }
    if (week == 3) CHECK(row.on_board == 0.0);  // week 2 had no entry
  }
}

TEST_CASE("off-leaderboard weeks carry zero rank fields and a zero indicator") {
  std::vector<ActivityEvent> activity = {{3, 2, ActivityType::revision, 1}};
  auto panel = build_gamification_panel(activity, {}, {}, 9);
  for (const auto& row : panel.rows) {
    CHECK(row.on_board == 0.0);
    CHECK(row.rnk_lag == 0.0);
    CHECK(row.drnk_lag == 0.0);
  }
}

TEST_CASE("sum of daily y equals total contribution events") {
  std::vector<ActivityEvent> activity;
  Rng rng(3);
  int contributions = 0;
  for (int e = 0; e < 200; ++e) {
    ActivityEvent ev;
    ev.user_id = rng.uniform_int(6);
    ev.day = 2 + rng.uniform_int(28);  // day 1 lags out of the panel
    ev.type = static_cast<ActivityType>(rng.uniform_int(6));
    ev.count = 1 + rng.uniform_int(3);
    if (is_contribution(ev.type)) contributions += ev.count;
    activity.push_back(ev);
  }
  auto panel = build_gamification_panel(activity, {}, {}, 30);
  int total_y = 0;
  for (const auto& row : panel.rows) total_y += row.y;
  CHECK(total_y == contributions);
}

TEST_CASE("strict lag audit: day-t rows ignore day-t and later state events") {
  std::vector<ActivityEvent> base = {{1, 5, ActivityType::comment, 2},
                                     {1, 8, ActivityType::review, 1}};
  auto panel_full = build_gamification_panel(base, {}, {}, 12);

  // Adding an event on day 9 must leave all rows at day <= 9 unchanged except
  // through the demeaning constant, which we hold fixed by comparing raw
  // cumulative states reconstructed from cont_lag.
  std::vector<ActivityEvent> extended = base;
  extended.push_back({1, 9, ActivityType::comment, 5});
  auto panel_ext = build_gamification_panel(extended, {}, {}, 12);

  auto raw_cont = [](const GamificationPanel& p, int day) {
    for (const auto& row : p.rows)
      if (row.user_id == 1 && row.day == day)
        return row.cont_lag * 100.0 + p.cont_mean;
    return -1.0;
  };
  for (int day = 2; day <= 9; ++day)
    CHECK(raw_cont(panel_full, day) == Catch::Approx(raw_cont(panel_ext, day)));
  CHECK(raw_cont(panel_ext, 10) == raw_cont(panel_full, 10) + 5.0);
}

TEST_CASE("binomial conversion caps successes at the trial count") {
  std::vector<ActivityEvent> activity = {{1, 3, ActivityType::comment, 4}};
  auto panel = build_gamification_panel(activity, {}, {}, 5);
  auto units = gamification_panel_units(panel, 1);
  REQUIRE(units.size() == 1);
  int day3_idx = 1;  // rows start at day 2
  CHECK(units[0].successes[day3_idx] == 1);
  CHECK(units[0].trials[day3_idx] == 1);

  auto units3 = gamification_panel_units(panel, 3);
  CHECK(units3[0].successes[day3_idx] == 3);
}
