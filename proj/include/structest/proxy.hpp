#pragma once

#include <vector>

#include "structest/common.hpp"

namespace structest {

struct ProxyAuctionConfig {
  double reserve = 25.0;
  double increment = 1.0;

  void validate() const {
    require(reserve > 0.0 && increment > 0.0, "proxy: reserve and increment > 0");
  }
};

struct ProxyBidOutcome {
  std::vector<double> board;        // displayed bid after each valid proxy
  std::vector<bool> valid;          // per submitted proxy
  int winner = -1;                  // index into the submitted sequence
  double price = 0.0;               // amount the winner pays
};

// eBay-style proxy engine. The board shows the second-highest maximum plus
// the minimum increment, capped at the leader's proxy; a proxy below the
// current board is flagged invalid and ignored. Ties go to the earlier proxy.
inline ProxyBidOutcome proxy_bid_engine(const std::vector<double>& proxy_bids,
                                        const ProxyAuctionConfig& cfg) {
  cfg.validate();
  for (double b : proxy_bids) require(b > 0.0, "proxy: bids must be positive");

  ProxyBidOutcome out;
  out.valid.assign(proxy_bids.size(), false);
  double highest = 0.0, second = 0.0;
  int leader = -1;
  double board = cfg.reserve;

  for (std::size_t i = 0; i < proxy_bids.size(); ++i) {
    double p = proxy_bids[i];
    if (p < board && leader >= 0) continue;  // below the displayed bid
    if (leader < 0 && p < cfg.reserve) continue;
    out.valid[i] = true;

    if (leader < 0) {
      highest = p;
      leader = static_cast<int>(i);
      board = cfg.reserve;
    } else if (p > highest) {
      second = highest;
      highest = p;
      leader = static_cast<int>(i);
      board = std::min(second + cfg.increment, highest);
    } else {
      if (p > second) second = p;
      board = std::min(second + cfg.increment, highest);
    }
    out.board.push_back(board);
  }

  out.winner = leader;
  if (leader >= 0)
    out.price = second > 0.0 ? std::min(second + cfg.increment, highest) : cfg.reserve;
  return out;
}

}  // namespace structest
