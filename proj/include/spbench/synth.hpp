#pragma once

// Seeded synthetic interaction generator. Users belong to a primary taste
// cluster and drift towards a secondary one over time; item popularity inside
// each cluster follows a Zipf law. Output uses the raw-input layout
// `user_id,book_id,rating,timestamp` with epoch-second timestamps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <unordered_set>
#include <vector>

#include <fmt/format.h>

#include "spbench/dataset.hpp"
#include "spbench/rng.hpp"

namespace spbench {

struct SynthConfig {
  std::size_t users = 2000;
  std::size_t items = 10000;
  std::size_t interactions = 125000;  // expected raw rows, all ratings
  std::size_t clusters = 20;
  double zipf = 0.9;
  double drift = 0.4;          // probability of drawing from the secondary cluster at the end of the range
  double explore = 0.1;        // probability of drawing from a random cluster
  double positive_rate = 0.8;  // share of 5-star rows
  Timestamp start = 1341100800;  // 2012-07-01
  Timestamp end = 1420156800;    // 2015-01-02
  std::uint64_t seed = 1;

  void validate() const {
    if (users == 0 || items == 0 || interactions == 0 || clusters == 0)
      throw ConfigError("synth: users, items, interactions and clusters must be positive");
    if (clusters > items) throw ConfigError("synth: more clusters than items");
    if (!(zipf >= 0.0)) throw ConfigError("synth: zipf exponent must be >= 0");
    for (double p : {drift, explore, positive_rate})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: probabilities must lie in [0, 1]");
    if (start >= end) throw ConfigError("synth: start must precede end");
  }
};

inline void generate_synthetic(std::ostream& out, const SynthConfig& cfg) {
  cfg.validate();
  Xoshiro256 rng(cfg.seed);

  std::vector<ItemId> order(cfg.items);
  for (std::size_t i = 0; i < cfg.items; ++i) order[i] = static_cast<ItemId>(i);
  shuffle(std::span<ItemId>(order), rng);
  std::vector<std::vector<ItemId>> members(cfg.clusters);
  for (std::size_t r = 0; r < cfg.items; ++r) members[r % cfg.clusters].push_back(order[r]);
  std::vector<std::vector<double>> cumulative(cfg.clusters);
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < members[c].size(); ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf);
      cumulative[c].push_back(acc);
    }
  }
  auto draw_item = [&](std::size_t c) {
    const auto& cum = cumulative[c];
    const double x = rng.uniform() * cum.back();
    const auto pos = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), x) - cum.begin());
    return members[c][std::min(pos, members[c].size() - 1)];
  };

  const double mean = static_cast<double>(cfg.interactions) / static_cast<double>(cfg.users);
  const double span = static_cast<double>(cfg.end - cfg.start);
  out << "user_id,book_id,rating,timestamp\n";
  std::vector<Timestamp> times;
  std::unordered_set<ItemId> taken;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::size_t primary = rng.below(cfg.clusters);
    std::size_t secondary = primary;
    if (cfg.clusters > 1) secondary = (primary + 1 + rng.below(cfg.clusters - 1)) % cfg.clusters;
    // Log-normal activity with the requested mean.
    const double activity = mean * std::exp(0.5 * rng.normal() - 0.125);
    const std::size_t n = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(activity)), 4, cfg.items / 2);
    times.resize(n);
    for (auto& t : times) t = cfg.start + static_cast<Timestamp>(rng.uniform() * span);
    std::sort(times.begin(), times.end());
    taken.clear();
    for (Timestamp t : times) {
      const double progress = static_cast<double>(t - cfg.start) / span;
      ItemId item = 0;
      bool found = false;
      for (int attempt = 0; attempt < 32 && !found; ++attempt) {
        std::size_t c = primary;
        if (rng.uniform() < cfg.explore)
          c = rng.below(cfg.clusters);
        else if (rng.uniform() < cfg.drift * progress)
          c = secondary;
        item = draw_item(c);
        found = taken.insert(item).second;
      }
      if (!found) continue;
      const int rating = rng.uniform() < cfg.positive_rate ? 5 : 1 + static_cast<int>(rng.below(4));
      out << fmt::format("u{:05d},b{:05d},{},{}\n", u, item, rating, t);
    }
  }
}

}  // namespace spbench
