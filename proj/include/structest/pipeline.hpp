#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "structest/clustering.hpp"
#include "structest/config.hpp"
#include "structest/counterfactual.hpp"
#include "structest/csv.hpp"
#include "structest/diffusion.hpp"
#include "structest/lda.hpp"
#include "structest/synth.hpp"

namespace structest {

using nlohmann::json;

// Exit codes: 0 success, 1 estimation failure, 2 validation failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitEstimationFailure = 1;
inline constexpr int kExitValidationFailure = 2;

namespace pipeline_detail {

class StageLog {
 public:
  explicit StageLog(const std::string& path) : path_(path) {}

  template <typename F>
  void stage(const std::string& name, F&& body) {
    auto start = std::chrono::steady_clock::now();
    body();
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - start)
                  .count();
    lines_.push_back(name + " " + std::to_string(ms) + "ms");
  }

  void flush() const {
    std::ofstream f(path_);
    for (const auto& l : lines_) f << l << "\n";
  }

 private:
  std::string path_;
  std::vector<std::string> lines_;
};

inline std::string out_dir(const Config& cfg) {
  if (cfg.has("output_dir")) return cfg.get_string("output_dir");
  const char* env = std::getenv("STRUCTEST_OUTPUT_DIR");
  return env ? env : "out";
}

inline void write_failure_manifest(const std::string& dir, const std::string& stage,
                                   const std::string& message) {
  json j;
  j["failed_stage"] = stage;
  j["message"] = message;
  std::ofstream f(dir + "/failure.json");
  f << j.dump(2) << "\n";
}

// --------------------------- CSV schemas -----------------------------------

inline CsvTable adoption_table(const DiffusionSim& sim) {
  CsvTable t;
  t.header = {"category_id", "day", "cumulative_adopters"};
  for (int j = 0; j < sim.y.rows(); ++j)
    for (int d = 0; d < sim.y.cols(); ++d)
      t.add_row({std::to_string(j + 1), std::to_string(d + 1),
                 format_double(sim.y(j, d))});
  return t;
}

inline Matrix adoption_from_table(const CsvTable& t) {
  int cat = t.column("category_id"), day = t.column("day"),
      val = t.column("cumulative_adopters");
  int max_cat = 0, max_day = 0;
  for (const auto& row : t.rows) {
    max_cat = std::max(max_cat, std::stoi(row[cat]));
    max_day = std::max(max_day, std::stoi(row[day]));
  }
  Matrix y = Matrix::Zero(max_cat, max_day);
  for (const auto& row : t.rows)
    y(std::stoi(row[cat]) - 1, std::stoi(row[day]) - 1) = std::stod(row[val]);
  return y;
}

inline CsvTable auction_table(const AuctionPanel& panel,
                              const std::map<int, int>& clusters) {
  CsvTable t;
  t.header = {"auction_id", "bid_index", "bidder_id",   "proxy_bid",
              "board_bid",  "cum_bidders", "time_trend", "cluster_id"};
  for (const auto& trace : panel.traces) {
    for (int i = 0; i < trace.n_bids(); ++i)
      t.add_row({std::to_string(trace.auction_id), std::to_string(i),
                 std::to_string(trace.bidder_ids[i]), format_double(trace.bids[i]),
                 format_double(trace.board[i]), std::to_string(trace.cum_bidders[i]),
                 format_double(trace.time_trend[i]),
                 std::to_string(clusters.at(trace.auction_id))});
  }
  return t;
}

inline CsvTable bidder_table(const AuctionPanel& panel,
                             const std::map<int, int>& segments) {
  CsvTable t;
  const int q = static_cast<int>(panel.bidder_covariates.begin()->second.size());
  t.header = {"bidder_id", "segment"};
  for (int c = 0; c < q; ++c) t.header.push_back("d" + std::to_string(c + 1));
  for (const auto& [id, cov] : panel.bidder_covariates) {
    std::vector<std::string> row = {std::to_string(id),
                                    std::to_string(segments.at(id))};
    for (int c = 0; c < q; ++c) row.push_back(format_double(cov(c)));
    t.add_row(row);
  }
  return t;
}

struct ParsedAuctionData {
  AuctionPanel panel;
  std::map<int, int> bidder_segment;
  std::map<int, int> auction_cluster;
  int n_segments = 0;
  int n_clusters = 0;
};

inline ParsedAuctionData auction_from_tables(const CsvTable& bids,
                                             const CsvTable& bidders) {
  ParsedAuctionData out;
  int aid = bids.column("auction_id"), bidx = bids.column("bid_index"),
      bdid = bids.column("bidder_id"), proxy = bids.column("proxy_bid"),
      board = bids.column("board_bid"), cum = bids.column("cum_bidders"),
      trend = bids.column("time_trend"), clus = bids.column("cluster_id");

  std::map<int, std::vector<std::vector<std::string>>> rows_by_auction;
  for (const auto& row : bids.rows)
    rows_by_auction[std::stoi(row[aid])].push_back(row);
  for (auto& [auction, rows] : rows_by_auction) {
    std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
      return std::stoi(a[bidx]) < std::stoi(b[bidx]);
    });
    AuctionTrace trace;
    trace.auction_id = auction;
    for (const auto& row : rows) {
      trace.bids.push_back(std::stod(row[proxy]));
      trace.bidder_ids.push_back(std::stoi(row[bdid]));
      trace.board.push_back(std::stod(row[board]));
      trace.cum_bidders.push_back(std::stoi(row[cum]));
      trace.time_trend.push_back(std::stod(row[trend]));
      trace.cluster_id = std::stoi(row[clus]);
    }
    out.auction_cluster[auction] = trace.cluster_id;
    out.n_clusters = std::max(out.n_clusters, trace.cluster_id + 1);
    out.panel.traces.push_back(std::move(trace));
    Vector d(1);
    d << 1.0;
    out.panel.auction_covariates[auction] = d;
  }

  int id_col = bidders.column("bidder_id"), seg = bidders.column("segment");
  std::vector<int> d_cols;
  for (std::size_t c = 0; c < bidders.header.size(); ++c)
    if (bidders.header[c].rfind("d", 0) == 0 && bidders.header[c].size() <= 3)
      d_cols.push_back(static_cast<int>(c));
  for (const auto& row : bidders.rows) {
    int id = std::stoi(row[id_col]);
    out.bidder_segment[id] = std::stoi(row[seg]);
    out.n_segments = std::max(out.n_segments, out.bidder_segment[id] + 1);
    Vector d(static_cast<int>(d_cols.size()));
    for (std::size_t c = 0; c < d_cols.size(); ++c) d(c) = std::stod(row[d_cols[c]]);
    out.panel.bidder_covariates[id] = d;
  }
  return out;
}

// Generic mixed-logit panel: one row per unit-week with the flattened
// alternative-by-coefficient design.
inline CsvTable choice_table(const std::vector<UnitData>& panel) {
  CsvTable t;
  const int j_n = static_cast<int>(panel.front().designs.front().rows());
  const int d_n = panel.front().dim();
  t.header = {"unit_id", "week", "chosen_category"};
  for (int j = 0; j < j_n; ++j)
    for (int c = 0; c < d_n; ++c)
      t.header.push_back("x_a" + std::to_string(j + 1) + "_c" + std::to_string(c + 1));
  for (const auto& unit : panel) {
    for (std::size_t w = 0; w < unit.designs.size(); ++w) {
      std::vector<std::string> row = {std::to_string(unit.id), std::to_string(w + 1),
                                      std::to_string(unit.choices[w])};
      for (int j = 0; j < j_n; ++j)
        for (int c = 0; c < d_n; ++c)
          row.push_back(format_double(unit.designs[w](j, c)));
      t.add_row(row);
    }
  }
  return t;
}

inline std::vector<UnitData> choice_from_table(const CsvTable& t) {
  int unit_col = t.column("unit_id"), week_col = t.column("week"),
      chosen_col = t.column("chosen_category");
  int j_n = 0, d_n = 0;
  for (const auto& h : t.header) {
    if (h.rfind("x_a", 0) == 0) {
      auto cpos = h.find("_c");
      j_n = std::max(j_n, std::stoi(h.substr(3, cpos - 3)));
      d_n = std::max(d_n, std::stoi(h.substr(cpos + 2)));
    }
  }
  std::map<int, std::map<int, std::pair<Matrix, int>>> staged;
  for (const auto& row : t.rows) {
    Matrix x(j_n, d_n);
    int at = chosen_col + 1;
    for (int j = 0; j < j_n; ++j)
      for (int c = 0; c < d_n; ++c) x(j, c) = std::stod(row[at++]);
    staged[std::stoi(row[unit_col])][std::stoi(row[week_col])] = {
        x, std::stoi(row[chosen_col])};
  }
  std::vector<UnitData> panel;
  for (const auto& [id, byweek] : staged) {
    UnitData unit;
    unit.id = id;
    unit.mode = ChoiceMode::multinomial;
    for (const auto& [w, xy] : byweek) {
      unit.designs.push_back(xy.first);
      unit.choices.push_back(xy.second);
    }
    unit.z = Vector::Constant(1, 1.0);
    panel.push_back(std::move(unit));
  }
  return panel;
}

inline CsvTable gamification_tables(const GamificationGenResult& gen, CsvTable& board,
                                    CsvTable& badges) {
  CsvTable activity;
  activity.header = {"user_id", "day", "activity_type", "count"};
  auto type_name = [](ActivityType t) -> std::string {
    switch (t) {
      case ActivityType::comment: return "comment";
      case ActivityType::post_answered: return "post_answered";
      case ActivityType::revision: return "revision";
      case ActivityType::accepted: return "accepted";
      case ActivityType::review: return "review";
      case ActivityType::post_asked: return "post_asked";
    }
    return "comment";
  };
  for (const auto& e : gen.activity)
    activity.add_row({std::to_string(e.user_id), std::to_string(e.day),
                      type_name(e.type), std::to_string(e.count)});

  board.header = {"user_id", "week", "reputation", "weekly_reputation", "rank"};
  for (const auto& e : gen.leaderboard)
    board.add_row({std::to_string(e.user_id), std::to_string(e.week),
                   format_double(e.reputation), format_double(e.weekly_reputation),
                   std::to_string(e.rank)});

  badges.header = {"user_id", "day", "level"};
  for (const auto& e : gen.badges)
    badges.add_row({std::to_string(e.user_id), std::to_string(e.day),
                    e.level == BadgeLevel::gold
                        ? "gold"
                        : (e.level == BadgeLevel::silver ? "silver" : "bronze")});
  return activity;
}

struct GamificationCsvs {
  std::vector<ActivityEvent> activity;
  std::vector<LeaderboardEntry> leaderboard;
  std::vector<BadgeEvent> badges;
};

inline GamificationCsvs gamification_from_tables(const CsvTable& activity,
                                                 const CsvTable& board,
                                                 const CsvTable& badges) {
  GamificationCsvs out;
  auto type_of = [](const std::string& s) {
    if (s == "comment") return ActivityType::comment;
    if (s == "post_answered") return ActivityType::post_answered;
    if (s == "revision") return ActivityType::revision;
    if (s == "accepted") return ActivityType::accepted;
    if (s == "review") return ActivityType::review;
    if (s == "post_asked") return ActivityType::post_asked;
    throw std::invalid_argument("unknown activity_type: " + s);
  };
  {
    int u = activity.column("user_id"), d = activity.column("day"),
        ty = activity.column("activity_type"), c = activity.column("count");
    for (const auto& row : activity.rows)
      out.activity.push_back({std::stoi(row[u]), std::stoi(row[d]),
                              type_of(row[ty]), std::stoi(row[c])});
  }
  {
    int u = board.column("user_id"), w = board.column("week"),
        r = board.column("reputation"), wr = board.column("weekly_reputation"),
        rk = board.column("rank");
    for (const auto& row : board.rows)
      out.leaderboard.push_back({std::stoi(row[u]), std::stoi(row[w]),
                                 std::stod(row[r]), std::stod(row[wr]),
                                 std::stoi(row[rk])});
  }
  {
    int u = badges.column("user_id"), d = badges.column("day"),
        l = badges.column("level");
    for (const auto& row : badges.rows) {
      BadgeLevel level = row[l] == "gold"
                             ? BadgeLevel::gold
                             : (row[l] == "silver" ? BadgeLevel::silver
                                                   : BadgeLevel::bronze);
      out.badges.push_back({std::stoi(row[u]), std::stoi(row[d]), level});
    }
  }
  return out;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

namespace pipeline_detail {

inline JointDiffusionModel diffusion_model_from_config(const Config& cfg) {
  const int j_n = static_cast<int>(cfg.get_int("diffusion.categories", 1));
  JointDiffusionModel model;
  const int s = 2 * j_n;
  model.state_noise_factor = Matrix::Zero(s, s);
  model.obs_noise.resize(j_n);
  for (int j = 0; j < j_n; ++j) {
    std::string p = "diffusion.cat" + std::to_string(j + 1) + ".";
    SegmentedDiffusionParams sp;
    sp.p_inf = cfg.get_double(p + "p_inf", 0.024);
    sp.q_inf = cfg.get_double(p + "q_inf", 1e-6);
    sp.p_imm = cfg.get_double(p + "p_imm", 0.278);
    sp.q_imm = cfg.get_double(p + "q_imm", 0.191);
    sp.m_inf = cfg.get_double(p + "m_inf", 103.0);
    sp.m_imm = cfg.get_double(p + "m_imm", 1952.0);
    sp.w = cfg.get_double(p + "w", 0.032);
    sp.theta = cfg.get_double(p + "theta", 0.044);
    model.params.push_back(sp);
    double state_sd = cfg.get_double(p + "state_sd", 2.0);
    model.state_noise_factor(2 * j, 2 * j) = state_sd;
    model.state_noise_factor(2 * j + 1, 2 * j + 1) = state_sd;
    model.obs_noise(j) = std::pow(cfg.get_double(p + "obs_sd", 5.0), 2.0);
  }
  model.pop = Matrix::Zero(j_n, 0);
  return model;
}

inline int cmd_simulate(const Config& cfg, const std::string& dir, StageLog& log) {
  std::string kind = cfg.get_string("kind");
  std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

  if (kind == "diffusion") {
    auto model = diffusion_model_from_config(cfg);
    DiffusionSim sim;
    log.stage("simulate", [&] {
      sim = gen_diffusion(model, static_cast<int>(cfg.get_int("diffusion.days", 200)),
                          seed, cfg.get_bool("diffusion.noiseless", false));
    });
    adoption_table(sim).write(dir + "/adoption.csv");
    json truth;
    for (int j = 0; j < model.categories(); ++j) {
      const auto& p = model.params[j];
      truth["categories"].push_back({{"p_inf", p.p_inf},
                                     {"q_inf", p.q_inf},
                                     {"p_imm", p.p_imm},
                                     {"q_imm", p.q_imm},
                                     {"m_inf", p.m_inf},
                                     {"m_imm", p.m_imm},
                                     {"w", p.w},
                                     {"theta", p.theta}});
    }
    std::ofstream(dir + "/truth.json") << truth.dump(2) << "\n";
    return kExitOk;
  }
  if (kind == "choice") {
    const int units = static_cast<int>(cfg.get_int("choice.units", 50));
    const int weeks = static_cast<int>(cfg.get_int("choice.weeks", 20));
    const int j_n = static_cast<int>(cfg.get_int("choice.categories", 3));
    const int d_n = j_n + 2;
    Vector mean_a = Vector::Zero(d_n), mean_b = Vector::Zero(d_n);
    mean_a.head(j_n).setConstant(-1.0);
    mean_a(j_n) = 1.0;
    mean_a(j_n + 1) = 0.5;
    mean_b.head(j_n).setConstant(-0.5);
    mean_b(j_n) = -1.0;
    mean_b(j_n + 1) = -0.5;
    auto design = [j_n, d_n](int, int, Rng& rng) {
      Matrix x = Matrix::Zero(j_n, d_n);
      for (int j = 0; j < j_n; ++j) {
        x(j, j) = 1.0;
        x(j, j_n) = rng.normal();
        x(j, j_n + 1) = rng.normal();
      }
      return x;
    };
    ChoicePanelTruth out;
    log.stage("simulate", [&] {
      out = gen_choice_panel({mean_a, mean_b}, Vector::Constant(2, 0.5), 0.1, design,
                             units, weeks, seed);
    });
    choice_table(out.panel).write(dir + "/choice.csv");
    json truth;
    for (std::size_t i = 0; i < out.unit_truth.size(); ++i) {
      json u;
      u["unit_id"] = out.panel[i].id;
      u["component"] = out.component[i];
      for (int c = 0; c < out.unit_truth[i].size(); ++c)
        u["coefficients"].push_back(out.unit_truth[i](c));
      truth["units"].push_back(u);
    }
    std::ofstream(dir + "/truth.json") << truth.dump(2) << "\n";
    return kExitOk;
  }
  if (kind == "auction") {
    AuctionGenConfig gen_cfg = default_auction_gen();
    gen_cfg.n_auctions = static_cast<int>(cfg.get_int("auction.auctions", 10));
    gen_cfg.bidders_per_auction =
        static_cast<int>(cfg.get_int("auction.bidders_per_auction", 6));
    gen_cfg.bids_per_bidder =
        static_cast<int>(cfg.get_int("auction.bids_per_bidder", 5));
    gen_cfg.seed = seed;
    AuctionGenResult out;
    log.stage("simulate", [&] { out = gen_auction(gen_cfg); });
    auction_table(out.panel, out.auction_cluster).write(dir + "/auction.csv");
    bidder_table(out.panel, out.bidder_segment).write(dir + "/bidders.csv");
    json truth;
    for (const auto& [id, bp] : out.bidder_truth)
      truth["bidders"][std::to_string(id)] = {{"alpha", bp.alpha},
                                              {"beta", bp.beta},
                                              {"delta", bp.delta},
                                              {"rho", bp.rho}};
    std::ofstream(dir + "/truth.json") << truth.dump(2) << "\n";
    return kExitOk;
  }
  if (kind == "gamification") {
    GamificationGenConfig gen_cfg;
    gen_cfg.users = static_cast<int>(cfg.get_int("gamification.users", 20));
    gen_cfg.days = static_cast<int>(cfg.get_int("gamification.days", 120));
    gen_cfg.seed = seed;
    std::vector<Vector> truth_lams;
    Rng rng(seed ^ 0xBADGE5);
    for (int u = 0; u < gen_cfg.users; ++u) {
      Vector lam = Vector::Zero(14);
      lam(0) = rng.uniform(-0.5, 1.0);
      lam(8) = rng.uniform(-0.3, 0.5);
      lam(9) = rng.uniform(-0.3, 0.5);
      lam(10) = rng.uniform(-0.3, 0.5);
      truth_lams.push_back(lam);
    }
    GamificationGenResult out;
    log.stage("simulate", [&] { out = gen_gamification(truth_lams, gen_cfg); });
    CsvTable board, badges;
    auto activity = gamification_tables(out, board, badges);
    activity.write(dir + "/gamification.csv");
    board.write(dir + "/leaderboard.csv");
    badges.write(dir + "/badges.csv");
    json truth;
    for (const auto& [id, lam] : out.unit_truth) {
      json coeffs = json::array();
      for (int c = 0; c < lam.size(); ++c) coeffs.push_back(lam(c));
      truth["users"][std::to_string(id)] = coeffs;
    }
    std::ofstream(dir + "/truth.json") << truth.dump(2) << "\n";
    return kExitOk;
  }
  throw std::invalid_argument("simulate: unknown kind '" + kind + "'");
}

inline int cmd_cluster(const Config& cfg, const std::string& dir, StageLog& log) {
  std::string input = cfg.get_string("input");
  auto table = CsvTable::read(input);
  int id_col = table.column("unit_id");
  const int n = static_cast<int>(table.rows.size());
  const int p = static_cast<int>(table.header.size()) - 1;
  Matrix data(n, p);
  std::vector<std::string> ids(n);
  for (int i = 0; i < n; ++i) {
    ids[i] = table.rows[i][id_col];
    int at = 0;
    for (std::size_t c = 0; c < table.header.size(); ++c)
      if (static_cast<int>(c) != id_col) data(i, at++) = std::stod(table.rows[i][c]);
  }

  std::string method = cfg.get_string("cluster.method", "kmeans");
  std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  Partition part;
  log.stage("cluster", [&] {
    if (method == "kmeans") {
      part = kmeans(data, static_cast<int>(cfg.get_int("cluster.k", 5)),
                    KmeansInit::plus_plus, 100, seed)
                 .partition;
    } else if (method == "gmm") {
      auto res = gmm_em(data, static_cast<int>(cfg.get_int("cluster.k", 5)),
                        CovMode::full, 1e-8, 300, seed);
      part = res.mixture.hard_assign(res.responsibilities);
    } else if (method == "gmm_bic") {
      std::vector<int> range;
      for (int k = 1; k <= cfg.get_int("cluster.k_max", 6); ++k) range.push_back(k);
      int k = gmm_select(data, range, CovMode::full, seed);
      auto res = gmm_em(data, k, CovMode::full, 1e-8, 300, seed);
      part = res.mixture.hard_assign(res.responsibilities);
    } else if (method == "consensus") {
      auto km = kmeans(data, static_cast<int>(cfg.get_int("cluster.k", 5)),
                       KmeansInit::plus_plus, 100, seed)
                    .partition;
      auto gm = gmm_em(data, static_cast<int>(cfg.get_int("cluster.k", 5)),
                       CovMode::full, 1e-8, 300, seed);
      auto gm_part = gm.mixture.hard_assign(gm.responsibilities);
      part = ensemble_consensus({km, gm_part},
                                static_cast<int>(cfg.get_int("cluster.k_cut", 5)));
    } else {
      throw std::invalid_argument("cluster: unknown method '" + method + "'");
    }
  });

  CsvTable out;
  out.header = {"unit_id", "cluster"};
  for (int i = 0; i < n; ++i)
    out.add_row({ids[i], std::to_string(part.assignment[i])});
  out.write(dir + "/partition.csv");
  return kExitOk;
}

inline int cmd_fit_diffusion(const Config& cfg, const std::string& dir,
                             StageLog& log) {
  auto y = adoption_from_table(CsvTable::read(cfg.get_string("input")));
  DiffusionFitConfig fit_cfg;
  fit_cfg.mcem.max_iterations = static_cast<int>(cfg.get_int("mcem.max_iterations", 4));
  fit_cfg.ga.population = static_cast<int>(cfg.get_int("ga.population", 40));
  fit_cfg.ga.generations = static_cast<int>(cfg.get_int("ga.generations", 60));
  fit_cfg.ga.mutation_scale = cfg.get_double("ga.mutation_scale", 0.15);
  fit_cfg.ga.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  fit_cfg.ga.threads = static_cast<int>(cfg.get_int("threads", 1));

  DiffusionFit fit;
  log.stage("fit", [&] { fit = fit_map(y, Matrix::Zero(y.rows(), 0), fit_cfg); });

  json est;
  est["objective"] = fit.objective;
  est["mad"] = fit.mad;
  est["mse"] = fit.mse;
  for (int j = 0; j < fit.map_params.categories(); ++j) {
    const auto& p = fit.map_params.params[j];
    est["categories"].push_back({{"p_inf", p.p_inf},
                                 {"q_inf", p.q_inf},
                                 {"p_imm", p.p_imm},
                                 {"q_imm", p.q_imm},
                                 {"m_inf", p.m_inf},
                                 {"m_imm", p.m_imm},
                                 {"w", p.w},
                                 {"theta", p.theta}});
  }
  std::ofstream(dir + "/estimates.json") << est.dump(2) << "\n";

  CsvTable path;
  path.header = {"category_id", "day", "imitators"};
  for (int j = 0; j < fit.imitator_path.rows(); ++j)
    for (int t = 0; t < fit.imitator_path.cols(); ++t)
      path.add_row({std::to_string(j + 1), std::to_string(t + 1),
                    format_double(fit.imitator_path(j, t))});
  path.write(dir + "/imitator_path.csv");

  CsvTable fc;
  fc.header = {"category_id", "day", "observed", "forecast"};
  for (int j = 0; j < y.rows(); ++j)
    for (int t = 0; t < y.cols(); ++t)
      fc.add_row({std::to_string(j + 1), std::to_string(t + 1),
                  format_double(y(j, t)), format_double(fit.forecasts(j, t))});
  fc.write(dir + "/forecasts.csv");
  return kExitOk;
}

inline void write_sampler_outputs(const SamplerChains& chains,
                                  const std::vector<UnitData>& panel,
                                  const std::string& dir) {
  CsvTable means;
  const int d = static_cast<int>(chains.unit_draws.front().cols());
  means.header = {"unit_id"};
  for (int c = 0; c < d; ++c) means.header.push_back("coef" + std::to_string(c + 1));
  for (std::size_t i = 0; i < panel.size(); ++i) {
    std::vector<std::string> row = {std::to_string(panel[i].id)};
    Vector m = chains.unit_posterior_mean(static_cast<int>(i));
    for (int c = 0; c < d; ++c) row.push_back(format_double(m(c)));
    means.add_row(row);
  }
  means.write(dir + "/unit_means.csv");

  auto summary = significance_summary(chains);
  CsvTable sig;
  sig.header = {"coefficient", "positive_significant", "negative_significant",
                "null_effect"};
  for (int c = 0; c < d; ++c)
    sig.add_row({"coef" + std::to_string(c + 1),
                 std::to_string(summary.counts[c][0]),
                 std::to_string(summary.counts[c][1]),
                 std::to_string(summary.counts[c][2])});
  sig.write(dir + "/significance.csv");

  json hypers;
  hypers["occupied_mean"] =
      std::accumulate(chains.occupied_trace.begin(), chains.occupied_trace.end(), 0.0) /
      chains.occupied_trace.size();
  hypers["alpha_mean"] = chains.alpha_draws.mean();
  hypers["acceptance_mean"] = chains.acceptance_rate.mean();
  std::ofstream(dir + "/sampler.json") << hypers.dump(2) << "\n";
}

inline DpSamplerConfig sampler_config(const Config& cfg) {
  DpSamplerConfig sc;
  sc.sweeps = static_cast<int>(cfg.get_int("sampler.sweeps", 800));
  sc.burn_in = static_cast<int>(cfg.get_int("sampler.burn_in", 300));
  sc.k_trunc = static_cast<int>(cfg.get_int("sampler.k_trunc", 20));
  sc.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  sc.threads = static_cast<int>(cfg.get_int("threads", 1));
  return sc;
}

inline int cmd_fit_choice(const Config& cfg, const std::string& dir, StageLog& log) {
  auto panel = choice_from_table(CsvTable::read(cfg.get_string("input")));
  SamplerChains chains;
  log.stage("fit", [&] { chains = run_sampler(panel, sampler_config(cfg)); });
  write_sampler_outputs(chains, panel, dir);
  return kExitOk;
}

inline int cmd_fit_gamification(const Config& cfg, const std::string& dir,
                                StageLog& log) {
  auto csvs = gamification_from_tables(CsvTable::read(cfg.get_string("input")),
                                       CsvTable::read(cfg.get_string("leaderboard")),
                                       CsvTable::read(cfg.get_string("badges")));
  auto panel_rows = build_gamification_panel(
      csvs.activity, csvs.leaderboard, csvs.badges,
      static_cast<int>(cfg.get_int("gamification.days", 120)));
  auto panel =
      gamification_panel_units(panel_rows,
                               static_cast<int>(cfg.get_int("gamification.trials", 1)));
  SamplerChains chains;
  log.stage("fit", [&] { chains = run_sampler(panel, sampler_config(cfg)); });
  write_sampler_outputs(chains, panel, dir);
  return kExitOk;
}

inline int cmd_fit_auction(const Config& cfg, const std::string& dir, StageLog& log) {
  auto data = auction_from_tables(CsvTable::read(cfg.get_string("input")),
                                  CsvTable::read(cfg.get_string("bidders")));
  AuctionFitConfig fit_cfg;
  fit_cfg.mcem_max_rounds = static_cast<int>(cfg.get_int("mcem.max_rounds", 3));
  fit_cfg.sa_auction.max_evals = cfg.get_int("sa.auction_evals", 300);
  fit_cfg.sa_bidder.max_evals = cfg.get_int("sa.bidder_evals", 300);
  fit_cfg.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  fit_cfg.threads = static_cast<int>(cfg.get_int("threads", 1));

  AuctionEstimates est;
  log.stage("fit", [&] {
    est = fit_auction(data.panel, data.bidder_segment, data.n_segments,
                      data.auction_cluster, data.n_clusters, fit_cfg);
  });

  json out;
  out["map_value"] = est.parts.total();
  out["initial_objective"] = est.initial_objective;
  out["components"] = {{"bid_state_space", est.parts.bid_ss},
                       {"count_state_space", est.parts.count_ss},
                       {"valuation", est.parts.valuation},
                       {"bidder_hierarchy", est.parts.bidder_hier},
                       {"auction_hierarchy", est.parts.auction_hier}};
  for (const auto& [id, bp] : est.bidders)
    out["bidders"][std::to_string(id)] = {{"alpha", bp.alpha},
                                          {"beta", bp.beta},
                                          {"delta", bp.delta},
                                          {"rho", bp.rho}};
  for (const auto& [id, psi] : est.auctions)
    out["auctions"][std::to_string(id)] = {{"tau", psi.tau},
                                           {"gamma", psi.gamma},
                                           {"iota", psi.iota},
                                           {"eta", psi.eta},
                                           {"sigma_v", psi.sigma_v},
                                           {"sigma_w", psi.sigma_w},
                                           {"sigma_zeta1", psi.sigma_zeta1},
                                           {"sigma_xi1", psi.sigma_xi1},
                                           {"sigma_zeta2", psi.sigma_zeta2},
                                           {"sigma_xi2", psi.sigma_xi2}};
  std::ofstream(dir + "/estimates.json") << out.dump(2) << "\n";
  return kExitOk;
}

inline void write_report_csv(const CounterfactualReport& report,
                             const std::string& path) {
  CsvTable t;
  t.header = {"label", "baseline", "scenario", "delta"};
  for (const auto& row : report.breakdown)
    t.add_row({row.label, format_double(row.baseline), format_double(row.scenario),
               format_double(row.delta())});
  t.add_row({"total", format_double(report.baseline), format_double(report.scenario),
             format_double(report.absolute_delta())});
  t.write(path);
}

inline int cmd_counterfactual(const Config& cfg, const std::string& dir,
                              StageLog& log) {
  std::string kind = cfg.get_string("kind");
  if (kind == "auction") {
    auto data = auction_from_tables(CsvTable::read(cfg.get_string("input")),
                                    CsvTable::read(cfg.get_string("bidders")));
    json est_json;
    std::ifstream(cfg.get_string("estimates")) >> est_json;
    AuctionEstimates est;
    for (auto& [id, v] : est_json["bidders"].items()) {
      BidderParams bp;
      bp.alpha = v["alpha"];
      bp.beta = v["beta"];
      bp.delta = v["delta"];
      bp.rho = v["rho"];
      est.bidders[std::stoi(id)] = bp;
    }
    for (auto& [id, v] : est_json["auctions"].items()) {
      AuctionParams psi;
      psi.tau = v["tau"];
      psi.gamma = v["gamma"];
      psi.iota = v["iota"];
      psi.eta = v["eta"];
      psi.sigma_v = v["sigma_v"];
      psi.sigma_w = v["sigma_w"];
      psi.sigma_zeta1 = v["sigma_zeta1"];
      psi.sigma_xi1 = v["sigma_xi1"];
      psi.sigma_zeta2 = v["sigma_zeta2"];
      psi.sigma_xi2 = v["sigma_xi2"];
      est.auctions[std::stoi(id)] = psi;
    }
    std::string mode = cfg.get_string("counterfactual.mode", "winner");
    RegretShutdownResult res;
    log.stage("counterfactual", [&] {
      res = regret_shutdown(data.panel, est,
                            mode == "both" ? ShutdownMode::both : ShutdownMode::winner);
    });
    write_report_csv(res.report, dir + "/counterfactual.csv");
    return kExitOk;
  }
  if (kind == "choice") {
    auto panel = choice_from_table(CsvTable::read(cfg.get_string("input")));
    auto means_table = CsvTable::read(cfg.get_string("estimates"));
    ChoiceFit fit;
    fit.units = panel;
    fit.categories = static_cast<int>(panel.front().designs.front().rows());
    fit.influence_col = static_cast<int>(cfg.get_int("counterfactual.influence_col"));
    std::map<int, Vector> means;
    int idc = means_table.column("unit_id");
    for (const auto& row : means_table.rows) {
      Vector m(static_cast<int>(means_table.header.size()) - 1);
      int at = 0;
      for (std::size_t c = 0; c < means_table.header.size(); ++c)
        if (static_cast<int>(c) != idc) m(at++) = std::stod(row[c]);
      means[std::stoi(row[idc])] = m;
    }
    for (const auto& unit : fit.units) fit.coefficients.push_back(means.at(unit.id));
    double factor = cfg.get_double("counterfactual.factor", 0.0);
    CounterfactualReport report;
    log.stage("counterfactual",
              [&] { report = perturb_social_influence(fit, factor); });
    write_report_csv(report, dir + "/counterfactual.csv");
    return kExitOk;
  }
  if (kind == "gamification") {
    auto csvs = gamification_from_tables(CsvTable::read(cfg.get_string("input")),
                                         CsvTable::read(cfg.get_string("leaderboard")),
                                         CsvTable::read(cfg.get_string("badges")));
    auto rows = build_gamification_panel(
        csvs.activity, csvs.leaderboard, csvs.badges,
        static_cast<int>(cfg.get_int("gamification.days", 120)));
    GamificationFit fit;
    fit.units = gamification_panel_units(rows, 1);
    auto means_table = CsvTable::read(cfg.get_string("estimates"));
    std::map<int, Vector> means;
    int idc = means_table.column("unit_id");
    for (const auto& row : means_table.rows) {
      Vector m(static_cast<int>(means_table.header.size()) - 1);
      int at = 0;
      for (std::size_t c = 0; c < means_table.header.size(); ++c)
        if (static_cast<int>(c) != idc) m(at++) = std::stod(row[c]);
      means[std::stoi(row[idc])] = m;
    }
    for (const auto& unit : fit.units) fit.coefficients.push_back(means.at(unit.id));

    std::string scen = cfg.get_string("counterfactual.scenario", "shutdown_all");
    BadgeScenario scenario = BadgeScenario::shutdown_all;
    double factor = cfg.get_double("counterfactual.factor", 1.0);
    if (scen == "null") scenario = BadgeScenario::null_scenario;
    else if (scen == "scale_all") scenario = BadgeScenario::scale_all;
    else if (scen == "scale_gold") scenario = BadgeScenario::scale_gold;
    else if (scen == "scale_silver_bronze") scenario = BadgeScenario::scale_silver_bronze;
    else if (scen == "shutdown_gold") scenario = BadgeScenario::shutdown_gold;
    else if (scen == "shutdown_silver_bronze")
      scenario = BadgeScenario::shutdown_silver_bronze;
    CounterfactualReport report;
    log.stage("counterfactual",
              [&] { report = badge_counterfactual(fit, scenario, factor); });
    write_report_csv(report, dir + "/counterfactual.csv");
    return kExitOk;
  }
  throw std::invalid_argument("counterfactual: unknown kind '" + kind + "'");
}

// Emit report tables from whatever artifacts exist in the artifact directory;
// missing inputs produce a partial report plus a manifest of what was
// skipped.
inline int cmd_report(const Config& cfg, const std::string& dir, StageLog& log) {
  namespace fs = std::filesystem;
  std::string artifacts = cfg.get_string("artifacts", dir);
  json manifest;
  manifest["present"] = json::array();
  manifest["missing"] = json::array();

  log.stage("report", [&] {
    if (fs::exists(artifacts + "/estimates.json")) {
      json est;
      std::ifstream(artifacts + "/estimates.json") >> est;
      CsvTable t;
      t.header = {"parameter", "mean", "sd", "min", "max"};
      auto summarize = [&](const std::string& family, const json& entries,
                           const std::string& field) {
        std::vector<double> values;
        for (auto& [id, v] : entries.items())
          if (v.contains(field)) values.push_back(v[field].get<double>());
        if (values.empty()) return;
        double mean = 0, mn = values[0], mx = values[0];
        for (double x : values) {
          mean += x;
          mn = std::min(mn, x);
          mx = std::max(mx, x);
        }
        mean /= values.size();
        double var = 0;
        for (double x : values) var += (x - mean) * (x - mean);
        var = values.size() > 1 ? var / (values.size() - 1) : 0.0;
        t.add_row({family + "." + field, format_double(mean),
                   format_double(std::sqrt(var)), format_double(mn),
                   format_double(mx)});
      };
      if (est.contains("bidders")) {
        for (const char* f : {"alpha", "beta", "delta", "rho"})
          summarize("bidder", est["bidders"], f);
      }
      if (est.contains("auctions")) {
        for (const char* f : {"tau", "gamma", "iota", "eta"})
          summarize("auction", est["auctions"], f);
      }
      t.write(dir + "/report_parameters.csv");
      manifest["present"].push_back("estimates.json");
    } else {
      manifest["missing"].push_back("estimates.json");
    }

    if (fs::exists(artifacts + "/significance.csv")) {
      auto sig = CsvTable::read(artifacts + "/significance.csv");
      sig.write(dir + "/report_significance.csv");
      manifest["present"].push_back("significance.csv");
    } else {
      manifest["missing"].push_back("significance.csv");
    }

    if (fs::exists(artifacts + "/counterfactual.csv")) {
      auto cf = CsvTable::read(artifacts + "/counterfactual.csv");
      cf.write(dir + "/report_counterfactual.csv");
      manifest["present"].push_back("counterfactual.csv");
    } else {
      manifest["missing"].push_back("counterfactual.csv");
    }
  });
  std::ofstream(dir + "/report_manifest.json") << manifest.dump(2) << "\n";
  return kExitOk;
}

}  // namespace pipeline_detail

// Run one pipeline stage from a parsed config. Throws invalid_argument for
// validation problems; other exceptions indicate estimation failures.
inline int run_pipeline(const Config& cfg) {
  namespace pd = pipeline_detail;
  std::string command = cfg.get_string("pipeline");
  require(cfg.has("seed"), "config: 'seed' is mandatory");
  std::string dir = pd::out_dir(cfg);
  std::filesystem::create_directories(dir);

  // Referenced input paths must exist before any work starts.
  for (const char* key : {"input", "bidders", "leaderboard", "badges", "estimates"}) {
    if (cfg.has(key)) {
      std::string path = cfg.get_string(key);
      if (!std::filesystem::exists(path))
        throw std::invalid_argument(std::string("config: ") + key +
                                    " path does not exist: " + path);
    }
  }

  pd::StageLog log(dir + "/run.log");
  int status = kExitValidationFailure;
  try {
    if (command == "simulate") status = pd::cmd_simulate(cfg, dir, log);
    else if (command == "cluster") status = pd::cmd_cluster(cfg, dir, log);
    else if (command == "fit-diffusion") status = pd::cmd_fit_diffusion(cfg, dir, log);
    else if (command == "fit-choice") status = pd::cmd_fit_choice(cfg, dir, log);
    else if (command == "fit-auction") status = pd::cmd_fit_auction(cfg, dir, log);
    else if (command == "fit-gamification")
      status = pd::cmd_fit_gamification(cfg, dir, log);
    else if (command == "counterfactual") status = pd::cmd_counterfactual(cfg, dir, log);
    else if (command == "report") status = pd::cmd_report(cfg, dir, log);
    else
      throw std::invalid_argument("config: unknown pipeline '" + command + "'");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    pd::write_failure_manifest(dir, command, e.what());
    log.flush();
    return kExitEstimationFailure;
  }
  log.flush();
  return status;
}

inline int run_pipeline_file(const std::string& config_path) {
  return run_pipeline(Config::load(config_path));
}

}  // namespace structest
