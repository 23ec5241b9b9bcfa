#pragma once

// Ranking metrics over leave-one-out holdouts.

#include <algorithm>
#include <cmath>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <fmt/format.h>

#include "spbench/model.hpp"

namespace spbench {

struct MetricSpec {
  std::string name;  // hit_ratio | ndcg | coverage
  std::size_t k = 20;

  std::string label() const { return fmt::format("{}@{}", name, k); }
  friend bool operator==(const MetricSpec&, const MetricSpec&) = default;
};

inline bool is_known_metric(const std::string& name) {
  return name == "hit_ratio" || name == "ndcg" || name == "coverage";
}

struct UserResult {
  UserId user = 0;
  ItemId truth = 0;
  std::optional<std::size_t> rank;  // 1-based; nullopt = absent from the candidate ranking
};

struct EvalOutcome {
  std::vector<UserResult> per_user;      // ascending user
  std::map<std::string, double> aggregate;  // keyed by MetricSpec::label()
  std::vector<RankedList> lists;         // top lists, ascending user
};

using RankedLists = std::map<UserId, RankedList>;

namespace detail {

inline const RankedList& list_for(const RankedLists& ranked, UserId u) {
  auto it = ranked.find(u);
  if (it == ranked.end()) throw DataError(fmt::format("no ranking for holdout user {}", u));
  return it->second;
}

inline std::optional<std::size_t> position_in(const RankedList& list, ItemId item, std::size_t k) {
  const std::size_t n = std::min(k, list.items.size());
  for (std::size_t r = 0; r < n; ++r)
    if (list.items[r] == item) return r + 1;
  return std::nullopt;
}

}  // namespace detail

/// Fraction of holdout users whose truth item is in their top-k list.
inline double hit_ratio_at_k(const RankedLists& ranked, const InteractionLog& truth, std::size_t k) {
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& x : truth)
    if (detail::position_in(detail::list_for(ranked, x.user), x.item, k)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Mean of 1/log2(rank + 1) over users, 0 when the truth is outside the top k.
inline double ndcg_at_k(const RankedLists& ranked, const InteractionLog& truth, std::size_t k) {
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& x : truth)
    if (auto pos = detail::position_in(detail::list_for(ranked, x.user), x.item, k))
      sum += 1.0 / std::log2(static_cast<double>(*pos) + 1.0);
  return sum / static_cast<double>(truth.size());
}

/// Distinct items appearing in any top-k list, over the catalog size.
inline double coverage_at_k(std::span<const RankedList> lists, std::span<const ItemId> catalog, std::size_t k) {
  if (catalog.empty()) throw DataError("coverage over an empty catalog");
  std::unordered_set<ItemId> in_catalog(catalog.begin(), catalog.end());
  std::unordered_set<ItemId> seen;
  for (const auto& l : lists) {
    const std::size_t n = std::min(k, l.items.size());
    for (std::size_t r = 0; r < n; ++r)
      if (in_catalog.contains(l.items[r])) seen.insert(l.items[r]);
  }
  return static_cast<double>(seen.size()) / static_cast<double>(in_catalog.size());
}

inline double hit_ratio_from_ranks(std::span<const UserResult> results, std::size_t k) {
  if (results.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : results)
    if (r.rank && *r.rank <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

inline double ndcg_from_ranks(std::span<const UserResult> results, std::size_t k) {
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : results)
    if (r.rank && *r.rank <= k) sum += 1.0 / std::log2(static_cast<double>(*r.rank) + 1.0);
  return sum / static_cast<double>(results.size());
}

/// Evaluates one model on several holdouts. Each user is ranked once and the
/// ranking is shared by every holdout that contains the user, since it does
/// not depend on the truth. Users are processed on up to `jobs` threads;
/// results are gathered by user index so the outcome does not depend on
/// scheduling.
template <RankingModel M>
std::vector<EvalOutcome> evaluate_holdouts(const M& model, std::span<const InteractionLog* const> holdouts,
                                           std::span<const ItemId> catalog, std::span<const MetricSpec> metrics,
                                           std::size_t list_length = 20, std::size_t jobs = 1) {
  for (const auto& m : metrics) {
    if (!is_known_metric(m.name)) throw ConfigError(fmt::format("unknown metric '{}'", m.name));
    if (m.k == 0) throw ConfigError(fmt::format("metric {} needs k >= 1", m.name));
    list_length = std::max(list_length, m.k);
  }
  std::vector<std::vector<Interaction>> rows(holdouts.size());
  std::vector<UserId> users;
  for (std::size_t h = 0; h < holdouts.size(); ++h) {
    rows[h].assign(holdouts[h]->begin(), holdouts[h]->end());
    std::sort(rows[h].begin(), rows[h].end(), [](const auto& a, const auto& b) { return a.user < b.user; });
    for (std::size_t r = 1; r < rows[h].size(); ++r)
      if (rows[h][r].user == rows[h][r - 1].user)
        throw DataError(fmt::format("holdout has more than one interaction for user {}", rows[h][r].user));
    for (const auto& x : rows[h]) users.push_back(x.user);
  }
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());

  // where[h][n]: row of users[n] in holdout h, or npos
  constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> where(holdouts.size(), std::vector<std::size_t>(users.size(), npos));
  for (std::size_t h = 0; h < holdouts.size(); ++h)
    for (std::size_t r = 0, n = 0; r < rows[h].size(); ++r) {
      while (users[n] != rows[h][r].user) ++n;
      where[h][n] = r;
    }

  std::vector<EvalOutcome> outs(holdouts.size());
  for (std::size_t h = 0; h < holdouts.size(); ++h) {
    outs[h].per_user.resize(rows[h].size());
    outs[h].lists.resize(rows[h].size());
  }
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<ItemId> truths;
    for (std::size_t n = begin; n < end; ++n) {
      truths.clear();
      for (std::size_t h = 0; h < holdouts.size(); ++h)
        if (where[h][n] != npos) truths.push_back(rows[h][where[h][n]].item);
      UserRankings ranking;
      try {
        ranking = rank_user(model, users[n], catalog, list_length, std::span<const ItemId>(truths));
      } catch (const Error& e) {
        throw Error(e.kind(), fmt::format("evaluating user {}: {}", users[n], e.what()));
      }
      for (std::size_t h = 0, t = 0; h < holdouts.size(); ++h) {
        const std::size_t r = where[h][n];
        if (r == npos) continue;
        outs[h].per_user[r] = {users[n], truths[t], ranking.truth_ranks[t]};
        outs[h].lists[r] = ranking.top;
        ++t;
      }
    }
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, users.size()));
  if (jobs == 1) {
    work(0, users.size());
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(jobs);
    const std::size_t chunk = (users.size() + jobs - 1) / jobs;
    for (std::size_t t = 0; t < jobs; ++t) {
      const std::size_t b = std::min(users.size(), t * chunk), e = std::min(users.size(), b + chunk);
      threads.emplace_back([&, t, b, e] {
        try {
          work(b, e);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (auto& out : outs)
    for (const auto& m : metrics) {
      double value = 0.0;
      if (m.name == "hit_ratio")
        value = hit_ratio_from_ranks(out.per_user, m.k);
      else if (m.name == "ndcg")
        value = ndcg_from_ranks(out.per_user, m.k);
      else
        value = coverage_at_k(out.lists, catalog, m.k);
      out.aggregate[m.label()] = value;
    }
  return outs;
}

template <RankingModel M>
EvalOutcome evaluate_model(const M& model, const InteractionLog& holdout, std::span<const ItemId> catalog,
                           std::span<const MetricSpec> metrics, std::size_t list_length = 20,
                           std::size_t jobs = 1) {
  const InteractionLog* one[] = {&holdout};
  return std::move(evaluate_holdouts(model, one, catalog, metrics, list_length, jobs).front());
}

inline void write_user_ranks(std::ostream& out, std::span<const UserResult> results) {
  out << "user,truth_item,rank\n";
  for (const auto& r : results) {
    out << r.user << ',' << r.truth << ',';
    if (r.rank)
      out << *r.rank;
    else
      out << "absent";
    out << '\n';
  }
}

inline std::vector<UserResult> read_user_ranks(std::istream& in) {
  std::vector<UserResult> results;
  std::string line;
  std::vector<std::string> f;
  if (!std::getline(in, line) || csv::trim(line) != "user,truth_item,rank")
    throw DataError("rank file must start with header 'user,truth_item,rank'");
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    std::int64_t u = 0, t = 0, r = 0;
    if (!csv::split_line(line, ',', f) || f.size() != 3 || !detail::parse_int(f[0], u) ||
        !detail::parse_int(f[1], t))
      throw DataError("malformed rank row");
    UserResult res{static_cast<UserId>(u), static_cast<ItemId>(t), std::nullopt};
    if (csv::trim(f[2]) != "absent") {
      if (!detail::parse_int(f[2], r) || r < 1) throw DataError("malformed rank value");
      res.rank = static_cast<std::size_t>(r);
    }
    results.push_back(res);
  }
  return results;
}

}  // namespace spbench
