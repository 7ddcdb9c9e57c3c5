#pragma once

#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "structest/common.hpp"
#include "structest/dp_mixlogit.hpp"

namespace structest {

// ---------------------------------------------------------------------------
// App-category choice panel
// ---------------------------------------------------------------------------

struct DownloadEvent {
  int unit_id = 0;
  int week = 0;      // 1-based
  int category = 0;  // 1..J
};

enum class InfluenceSource {
  local_imitators,
  global_imitators,
  local_adopters,
  global_adopters,
  none
};

// One unit-week: the chosen category (0 = outside), the download-history
// state, and the per-category covariates feeding the utilities.
struct AppChoiceRow {
  int unit_id = 0;
  int week = 0;
  int chosen = 0;
  double s_it = 0.0;
  Vector c_imm;    // per category; empty when the source is none
  Matrix factors;  // J x n_factors
  double tenure = 0.0;
};

struct AppPanel {
  std::vector<AppChoiceRow> rows;
  InfluenceSource source = InfluenceSource::none;
  int categories = 0;
};

// Build per-unit, per-week rows from download events. The history state
// increments by one exactly when the previous week's choice was an inside
// category; influence_source = none omits the covariate entirely.
inline AppPanel build_app_panel(const std::vector<DownloadEvent>& events,
                                const Matrix& influence_path,  // J x weeks
                                const Matrix& factor_scores,   // (J*weeks) x m
                                InfluenceSource source, int categories, int weeks,
                                const std::map<int, double>& tenure_by_unit) {
  require(categories >= 1 && weeks >= 1, "app panel: needs categories and weeks");
  const bool with_influence = source != InfluenceSource::none;
  if (with_influence)
    require(influence_path.rows() == categories && influence_path.cols() >= weeks,
            "app panel: influence path must cover the horizon");
  require(factor_scores.rows() >= categories * weeks,
          "app panel: factor scores must cover the horizon");

  std::map<int, std::map<int, int>> chosen;  // unit -> week -> category
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    if (ev.category < 1 || ev.category > categories) {
      std::ostringstream os;
      os << "app panel: event " << e << " references unknown category "
         << ev.category;
      throw std::invalid_argument(os.str());
    }
    require(ev.week >= 1 && ev.week <= weeks, "app panel: event week out of range");
    chosen[ev.unit_id][ev.week] = ev.category;
  }

  AppPanel panel;
  panel.source = source;
  panel.categories = categories;
  for (const auto& [unit, byweek] : chosen) {
    double s = 0.0;
    int prev_choice = 0;
    for (int w = 1; w <= weeks; ++w) {
      if (w > 1 && prev_choice != 0) s += 1.0;
      AppChoiceRow row;
      row.unit_id = unit;
      row.week = w;
      auto it = byweek.find(w);
      row.chosen = it == byweek.end() ? 0 : it->second;
      row.s_it = s;
      if (with_influence) row.c_imm = influence_path.col(w - 1).head(categories);
      row.factors = factor_scores.block((w - 1) * categories, 0, categories,
                                        factor_scores.cols());
      auto ten = tenure_by_unit.find(unit);
      row.tenure = ten == tenure_by_unit.end() ? 0.0 : ten->second;
      panel.rows.push_back(row);
      prev_choice = row.chosen;
    }
  }
  return panel;
}

// Design layout per alternative j: [category dummies (J), s_it, c_imm_j,
// factor columns]; the coefficient vector length is J + 1 + (influence) + m.
inline std::vector<UnitData> app_panel_units(const AppPanel& panel) {
  const int j_n = panel.categories;
  const bool with_influence = panel.source != InfluenceSource::none;
  std::map<int, UnitData> units;
  for (const auto& row : panel.rows) {
    const int m = static_cast<int>(row.factors.cols());
    const int dim = j_n + 1 + (with_influence ? 1 : 0) + m;
    Matrix x = Matrix::Zero(j_n, dim);
    for (int j = 0; j < j_n; ++j) {
      x(j, j) = 1.0;
      x(j, j_n) = row.s_it;
      int at = j_n + 1;
      if (with_influence) x(j, at++) = row.c_imm(j);
      for (int f = 0; f < m; ++f) x(j, at + f) = row.factors(j, f);
    }
    auto& unit = units[row.unit_id];
    unit.id = row.unit_id;
    unit.mode = ChoiceMode::multinomial;
    unit.designs.push_back(x);
    unit.choices.push_back(row.chosen);
    unit.z = Vector::Constant(1, row.tenure);
  }
  std::vector<UnitData> out;
  for (auto& [id, unit] : units) out.push_back(std::move(unit));
  return out;
}

// ---------------------------------------------------------------------------
// Gamification contribution panel
// ---------------------------------------------------------------------------

enum class ActivityType {
  comment,        // contribution
  post_answered,  // contribution
  revision,       // contribution
  accepted,       // reciprocity
  review,         // reciprocity
  post_asked      // reciprocity
};

inline bool is_contribution(ActivityType t) {
  return t == ActivityType::comment || t == ActivityType::post_answered ||
         t == ActivityType::revision;
}

struct ActivityEvent {
  int user_id = 0;
  int day = 0;  // 1-based
  ActivityType type = ActivityType::comment;
  int count = 1;
};

struct LeaderboardEntry {
  int user_id = 0;
  int week = 0;  // 1-based
  double reputation = 0.0;
  double weekly_reputation = 0.0;
  int rank = 0;  // smaller is better
};

enum class BadgeLevel { gold, silver, bronze };

struct BadgeEvent {
  int user_id = 0;
  int day = 0;
  BadgeLevel level = BadgeLevel::bronze;
};

// One user-day with all states lagged: one day for contribution/badge states,
// one week for leaderboard states.
struct GamificationRow {
  int user_id = 0;
  int day = 0;
  int y = 0;             // contributions that day (raw count)
  double cont_lag = 0.0;  // cumulative contributions, demeaned / 100
  double rcv_lag = 0.0;   // cumulative reciprocity / 100
  double crep_lag = 0.0;  // cumulative reputation at week w-1
  double rep_lag = 0.0;   // points earned in week w-1
  double rnk_lag = 0.0;
  double drnk_lag = 0.0;  // rnk_{w-1} - rnk_{w-2}
  double on_board = 0.0;  // 1 when the user appeared on the w-1 leaderboard
  Vector bdg_lag;         // (gold, silver, bronze) earned on day t-1
  Vector cbdg_lag;        // cumulative through day t-1
};

struct GamificationPanel {
  std::vector<GamificationRow> rows;
  double cont_mean = 0.0;  // demeaning constant, stored for reproducibility
};

inline GamificationPanel build_gamification_panel(
    const std::vector<ActivityEvent>& activity,
    const std::vector<LeaderboardEntry>& leaderboard,
    const std::vector<BadgeEvent>& badges, int days) {
  require(days >= 2, "gamification panel: needs at least two days");
  const int weeks = (days + 6) / 7;

  std::set<int> users;
  for (const auto& e : activity) {
    require(e.day >= 1 && e.day <= days, "gamification panel: event day out of range");
    users.insert(e.user_id);
  }
  for (const auto& e : badges) {
    require(e.day >= 1 && e.day <= days, "gamification panel: badge day out of range");
    users.insert(e.user_id);
  }
  for (const auto& e : leaderboard) users.insert(e.user_id);

  std::map<int, std::vector<int>> daily_contrib, daily_recv;
  for (int u : users) {
    daily_contrib[u].assign(days + 1, 0);
    daily_recv[u].assign(days + 1, 0);
  }
  for (const auto& e : activity) {
    if (is_contribution(e.type))
      daily_contrib[e.user_id][e.day] += e.count;
    else
      daily_recv[e.user_id][e.day] += e.count;
  }

  std::map<int, std::map<int, const LeaderboardEntry*>> board;  // user -> week
  for (const auto& e : leaderboard) {
    require(e.week >= 1 && e.week <= weeks + 1, "gamification panel: bad week");
    board[e.user_id][e.week] = &e;
  }

  std::map<int, std::vector<Vector>> badge_by_day;  // user -> day -> triple
  for (int u : users) badge_by_day[u].assign(days + 1, Vector::Zero(3));
  for (const auto& e : badges) {
    int idx = e.level == BadgeLevel::gold ? 0 : (e.level == BadgeLevel::silver ? 1 : 2);
    badge_by_day[e.user_id][e.day](idx) += 1.0;
  }

  // Demeaning constant for the cumulative-contribution state, computed over
  // the panel rows (lagged values).
  double cont_sum = 0.0;
  long cont_n = 0;
  for (int u : users) {
    double cum = 0.0;
    for (int t = 2; t <= days; ++t) {
      cum += daily_contrib[u][t - 1];
      cont_sum += cum;
      ++cont_n;
    }
  }
  GamificationPanel panel;
  panel.cont_mean = cont_n > 0 ? cont_sum / cont_n : 0.0;

  for (int u : users) {
    double cum_contrib = 0.0, cum_recv = 0.0;
    Vector cum_badges = Vector::Zero(3);
    for (int t = 2; t <= days; ++t) {
      cum_contrib += daily_contrib[u][t - 1];
      cum_recv += daily_recv[u][t - 1];
      cum_badges += badge_by_day[u][t - 1];

      GamificationRow row;
      row.user_id = u;
      row.day = t;
      row.y = daily_contrib[u][t];
      row.cont_lag = (cum_contrib - panel.cont_mean) / 100.0;
      row.rcv_lag = cum_recv / 100.0;
      row.bdg_lag = badge_by_day[u][t - 1];
      row.cbdg_lag = cum_badges;

      const int w = (t - 1) / 7 + 1;  // week containing day t
      auto& user_board = board[u];
      auto prev = user_board.find(w - 1);
      auto prev2 = user_board.find(w - 2);
      if (prev != user_board.end()) {
        row.on_board = 1.0;
        row.crep_lag = prev->second->reputation;
        row.rep_lag = prev->second->weekly_reputation;
        row.rnk_lag = prev->second->rank;
        row.drnk_lag = prev2 != user_board.end()
                           ? prev->second->rank - prev2->second->rank
                           : 0.0;
      }
      panel.rows.push_back(row);
    }
  }
  return panel;
}

// Design layout: [1, cont, rcv, crep, rep, rnk, drnk, on_board, bdg(3),
// cbdg(3)] -> 14 columns.
inline std::vector<UnitData> gamification_panel_units(const GamificationPanel& panel,
                                                      int trials_per_day = 1) {
  require(trials_per_day >= 1, "gamification units: trials >= 1");
  std::map<int, UnitData> units;
  std::map<int, std::vector<Vector>> rows_by_user;
  std::map<int, std::vector<int>> y_by_user;
  for (const auto& row : panel.rows) {
    Vector x(14);
    x << 1.0, row.cont_lag, row.rcv_lag, row.crep_lag, row.rep_lag, row.rnk_lag,
        row.drnk_lag, row.on_board, row.bdg_lag(0), row.bdg_lag(1), row.bdg_lag(2),
        row.cbdg_lag(0), row.cbdg_lag(1), row.cbdg_lag(2);
    rows_by_user[row.user_id].push_back(x);
    y_by_user[row.user_id].push_back(row.y);
  }
  std::vector<UnitData> out;
  for (const auto& [id, rows] : rows_by_user) {
    UnitData unit;
    unit.id = id;
    unit.mode = ChoiceMode::binomial;
    unit.bin_design.resize(static_cast<int>(rows.size()), 14);
    for (std::size_t r = 0; r < rows.size(); ++r)
      unit.bin_design.row(static_cast<int>(r)) = rows[r].transpose();
    for (int y : y_by_user[id]) {
      unit.successes.push_back(std::min(y, trials_per_day));
      unit.trials.push_back(trials_per_day);
    }
    unit.z = Vector::Zero(0);
    out.push_back(std::move(unit));
  }
  return out;
}

}  // namespace structest
