#pragma once

// Interaction logs: ingestion, user sampling, per-period filtering and dense
// re-indexing, plus the canonical on-disk formats.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "spbench/csv.hpp"
#include "spbench/error.hpp"
#include "spbench/rng.hpp"

namespace spbench {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;
using Timestamp = std::int64_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  Timestamp timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Timestamp-ordered interactions. Equal timestamps keep input order.
struct InteractionLog {
  std::vector<Interaction> interactions;

  std::size_t size() const noexcept { return interactions.size(); }
  bool empty() const noexcept { return interactions.empty(); }
  auto begin() const noexcept { return interactions.begin(); }
  auto end() const noexcept { return interactions.end(); }

  friend bool operator==(const InteractionLog&, const InteractionLog&) = default;
};

/// Bidirectional external key <-> dense index table for one entity kind.
class KeyIndex {
 public:
  /// Returns the dense index of `key`, registering it if new.
  std::uint32_t intern(const std::string& key) {
    auto [it, inserted] = forward_.try_emplace(key, static_cast<std::uint32_t>(reverse_.size()));
    if (inserted) reverse_.push_back(key);
    return it->second;
  }

  std::optional<std::uint32_t> find(const std::string& key) const {
    auto it = forward_.find(key);
    if (it == forward_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& key(std::uint32_t index) const { return reverse_.at(index); }
  std::size_t size() const noexcept { return reverse_.size(); }
  const std::vector<std::string>& keys() const noexcept { return reverse_; }

  friend bool operator==(const KeyIndex& a, const KeyIndex& b) { return a.reverse_ == b.reverse_; }

 private:
  std::unordered_map<std::string, std::uint32_t> forward_;
  std::vector<std::string> reverse_;
};

struct IdMap {
  KeyIndex users;
  KeyIndex items;

  /// First unused dense item index.
  ItemId next_item_index() const noexcept { return static_cast<ItemId>(items.size()); }

  friend bool operator==(const IdMap&, const IdMap&) = default;
};

struct ColumnRef {
  std::optional<std::size_t> index;  // zero-based
  std::string name;                  // resolved against the header row

  static ColumnRef at(std::size_t i) { return {i, {}}; }
  static ColumnRef named(std::string n) { return {std::nullopt, std::move(n)}; }
};

struct ColumnSpec {
  ColumnRef user = ColumnRef::at(0);
  ColumnRef item = ColumnRef::at(1);
  std::optional<ColumnRef> rating;
  ColumnRef timestamp = ColumnRef::at(2);
  char delimiter = ',';
  bool header = false;
};

struct ParsedLog {
  InteractionLog log;
  IdMap ids;
};

/// Half-open timestamp interval [begin, end).
struct Period {
  Timestamp begin = 0;
  Timestamp end = 0;

  bool contains(Timestamp t) const noexcept { return t >= begin && t < end; }
};

namespace detail {

inline bool parse_int(std::string_view s, std::int64_t& out) {
  s = csv::trim(s);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& out) {
  s = csv::trim(s);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline void stable_dedup(InteractionLog& log) {
  std::stable_sort(log.interactions.begin(), log.interactions.end(),
                   [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
  // Duplicates share a timestamp, so they sit inside one equal-timestamp run.
  std::vector<Interaction> out;
  out.reserve(log.interactions.size());
  std::unordered_set<std::uint64_t> seen_in_run;
  for (const auto& x : log.interactions) {
    if (!out.empty() && out.back().timestamp != x.timestamp) seen_in_run.clear();
    const std::uint64_t key = (static_cast<std::uint64_t>(x.user) << 32) | x.item;
    if (seen_in_run.insert(key).second) out.push_back(x);
  }
  log.interactions = std::move(out);
}

}  // namespace detail

/// Parses epoch seconds, or an ISO-8601 date (`YYYY-MM-DD`, optionally
/// followed by `THH:MM[:SS]` and `Z`). Dates without a time are UTC midnight.
inline std::optional<Timestamp> parse_timestamp(std::string_view text) {
  text = csv::trim(text);
  std::int64_t epoch = 0;
  if (detail::parse_int(text, epoch)) {
    if (epoch < 0) return std::nullopt;
    return epoch;
  }
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  std::int64_t y = 0, m = 0, d = 0;
  if (!detail::parse_int(text.substr(0, 4), y) || !detail::parse_int(text.substr(5, 2), m) ||
      !detail::parse_int(text.substr(8, 2), d))
    return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{static_cast<int>(y)}, month{static_cast<unsigned>(m)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  std::int64_t secs = sys_days{ymd}.time_since_epoch().count() * 86400LL;
  std::string_view rest = text.substr(10);
  if (!rest.empty()) {
    if (rest.front() != 'T' && rest.front() != ' ') return std::nullopt;
    rest.remove_prefix(1);
    if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
    std::int64_t hh = 0, mm = 0, ss = 0;
    if (rest.size() < 5 || rest[2] != ':' || !detail::parse_int(rest.substr(0, 2), hh) ||
        !detail::parse_int(rest.substr(3, 2), mm))
      return std::nullopt;
    if (rest.size() > 5) {
      if (rest.size() != 8 || rest[5] != ':' || !detail::parse_int(rest.substr(6, 2), ss))
        return std::nullopt;
    }
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    secs += hh * 3600 + mm * 60 + ss;
  }
  if (secs < 0) return std::nullopt;
  return secs;
}

/// Reads delimiter-separated interaction rows, keeps rows whose rating is at
/// least `rating_threshold` (when both are configured), registers external
/// keys in a fresh IdMap and returns a stable-sorted, deduplicated log.
/// Duplicate (user, item, timestamp) rows keep the first occurrence.
inline ParsedLog parse_interactions(std::istream& source, const ColumnSpec& spec,
                                    std::optional<double> rating_threshold = std::nullopt) {
  ParsedLog result;
  std::string line;
  std::vector<std::string> fields;
  std::size_t line_no = 0;

  std::size_t user_col = spec.user.index.value_or(0);
  std::size_t item_col = spec.item.index.value_or(0);
  std::size_t ts_col = spec.timestamp.index.value_or(0);
  std::optional<std::size_t> rating_col;
  if (spec.rating) rating_col = spec.rating->index.value_or(0);

  if (spec.header) {
    bool got = false;
    while (std::getline(source, line)) {
      ++line_no;
      if (csv::trim(line).empty()) continue;
      got = true;
      break;
    }
    if (!got) throw EmptyResultError("input stream has no rows");
    if (!csv::split_line(line, spec.delimiter, fields))
      throw DataError(fmt::format("line {}: unterminated quote in header", line_no));
    auto resolve = [&](const ColumnRef& ref, const char* role) -> std::size_t {
      if (ref.index) return *ref.index;
      for (std::size_t i = 0; i < fields.size(); ++i)
        if (csv::trim(fields[i]) == ref.name) return i;
      throw DataError(fmt::format("missing required column '{}' ({})", ref.name, role));
    };
    user_col = resolve(spec.user, "user");
    item_col = resolve(spec.item, "item");
    ts_col = resolve(spec.timestamp, "timestamp");
    if (spec.rating) rating_col = resolve(*spec.rating, "rating");
  } else {
    auto require_index = [](const ColumnRef& ref, const char* role) {
      if (!ref.index)
        throw DataError(fmt::format("column '{}' ({}) given by name but input has no header", ref.name, role));
    };
    require_index(spec.user, "user");
    require_index(spec.item, "item");
    require_index(spec.timestamp, "timestamp");
    if (spec.rating) require_index(*spec.rating, "rating");
  }

  std::size_t width = std::max({user_col, item_col, ts_col, rating_col.value_or(0)}) + 1;
  const bool filter = rating_threshold.has_value() && rating_col.has_value();

  while (std::getline(source, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    if (!csv::split_line(line, spec.delimiter, fields))
      throw DataError(fmt::format("line {}: unterminated quote", line_no));
    if (fields.size() < width)
      throw DataError(fmt::format("line {}: expected at least {} columns, found {}", line_no, width,
                                  fields.size()));
    if (filter) {
      double rating = 0.0;
      if (!detail::parse_double(fields[*rating_col], rating))
        throw DataError(fmt::format("line {}: bad rating '{}'", line_no, fields[*rating_col]));
      if (rating < *rating_threshold) continue;
    }
    auto ts = parse_timestamp(fields[ts_col]);
    if (!ts) throw DataError(fmt::format("line {}: bad timestamp '{}'", line_no, fields[ts_col]));
    const std::string user_key{csv::trim(fields[user_col])};
    const std::string item_key{csv::trim(fields[item_col])};
    if (user_key.empty() || item_key.empty())
      throw DataError(fmt::format("line {}: empty user or item key", line_no));
    result.log.interactions.push_back(
        {result.ids.users.intern(user_key), result.ids.items.intern(item_key), *ts});
  }
  if (result.log.empty()) throw EmptyResultError("no interactions left after parsing and filtering");
  detail::stable_dedup(result.log);
  return result;
}

inline std::vector<UserId> distinct_users(const InteractionLog& log) {
  std::vector<UserId> users;
  users.reserve(log.size());
  for (const auto& x : log) users.push_back(x.user);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  return users;
}

inline std::vector<ItemId> distinct_items(const InteractionLog& log) {
  std::vector<ItemId> items;
  items.reserve(log.size());
  for (const auto& x : log) items.push_back(x.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

/// Keeps every interaction of `n` users drawn uniformly without replacement.
/// Candidates are the distinct users in ascending index order, sampled by a
/// partial Fisher-Yates pass over Xoshiro256(seed).
inline InteractionLog sample_users(const InteractionLog& log, std::size_t n, std::uint64_t seed) {
  std::vector<UserId> users = distinct_users(log);
  if (n == 0) throw ConfigError("user sample size must be positive");
  if (n > users.size())
    throw DataError(fmt::format("cannot sample {} users from a log with {} distinct users", n, users.size()));
  if (n == users.size()) return log;
  Xoshiro256 rng(seed);
  partial_shuffle(std::span<UserId>(users), n, rng);
  std::unordered_set<UserId> chosen(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n));
  InteractionLog out;
  for (const auto& x : log)
    if (chosen.contains(x.user)) out.interactions.push_back(x);
  return out;
}

/// Keeps users with at least `min_count` interactions inside every period.
/// Removing one user never changes another user's counts, so a single pass
/// already reaches the fixed point.
inline InteractionLog filter_min_per_period(const InteractionLog& log, std::span<const Period> periods,
                                            std::size_t min_count) {
  if (periods.empty()) throw ConfigError("filter_min_per_period: empty period list");
  if (min_count == 0) throw ConfigError("filter_min_per_period: min_count must be positive");
  for (std::size_t p = 0; p < periods.size(); ++p) {
    if (periods[p].begin >= periods[p].end)
      throw ConfigError(fmt::format("period {} is empty or reversed", p));
    if (p > 0 && periods[p].begin < periods[p - 1].end)
      throw ConfigError("periods must be disjoint and ordered");
  }
  std::unordered_map<UserId, std::vector<std::size_t>> counts;
  for (const auto& x : log) {
    auto& c = counts[x.user];
    if (c.empty()) c.assign(periods.size(), 0);
    for (std::size_t p = 0; p < periods.size(); ++p)
      if (periods[p].contains(x.timestamp)) ++c[p];
  }
  InteractionLog out;
  for (const auto& x : log) {
    const auto& c = counts[x.user];
    if (std::all_of(c.begin(), c.end(), [&](std::size_t n) { return n >= min_count; }))
      out.interactions.push_back(x);
  }
  return out;
}

/// Renumbers users and items densely in first-appearance order. External keys
/// are carried over from `previous` when given, otherwise the old index is used.
inline std::pair<InteractionLog, IdMap> reindex_ids(const InteractionLog& log,
                                                    const IdMap* previous = nullptr) {
  IdMap ids;
  InteractionLog out;
  out.interactions.reserve(log.size());
  for (const auto& x : log) {
    const std::string uk = previous ? previous->users.key(x.user) : std::to_string(x.user);
    const std::string ik = previous ? previous->items.key(x.item) : std::to_string(x.item);
    out.interactions.push_back({ids.users.intern(uk), ids.items.intern(ik), x.timestamp});
  }
  return {std::move(out), std::move(ids)};
}

inline std::uint64_t fingerprint(const InteractionLog& log) {
  Fnv1a h;
  h.u64(log.size());
  for (const auto& x : log) {
    h.u64(x.user);
    h.u64(x.item);
    h.u64(static_cast<std::uint64_t>(x.timestamp));
  }
  return h.value();
}

// Canonical file formats ----------------------------------------------------

inline void write_interactions(std::ostream& out, const InteractionLog& log) {
  out << "user,item,timestamp\n";
  for (const auto& x : log) out << x.user << ',' << x.item << ',' << x.timestamp << '\n';
}

inline InteractionLog read_interactions(std::istream& in) {
  InteractionLog log;
  std::string line;
  std::vector<std::string> f;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || csv::trim(line) != "user,item,timestamp")
    throw DataError("canonical interaction file must start with header 'user,item,timestamp'");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    std::int64_t u = 0, i = 0, t = 0;
    if (!csv::split_line(line, ',', f) || f.size() != 3 || !detail::parse_int(f[0], u) ||
        !detail::parse_int(f[1], i) || !detail::parse_int(f[2], t) || u < 0 || i < 0 || t < 0 ||
        u > UINT32_MAX || i > UINT32_MAX)
      throw DataError(fmt::format("line {}: malformed canonical interaction row", line_no));
    log.interactions.push_back({static_cast<UserId>(u), static_cast<ItemId>(i), t});
  }
  return log;
}

inline void write_key_index(std::ostream& out, const KeyIndex& index) {
  out << "external_key,dense_index\n";
  for (std::size_t i = 0; i < index.size(); ++i)
    out << csv::quote(index.key(static_cast<std::uint32_t>(i))) << ',' << i << '\n';
}

inline KeyIndex read_key_index(std::istream& in) {
  KeyIndex index;
  std::string line;
  std::vector<std::string> f;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || csv::trim(line) != "external_key,dense_index")
    throw DataError("id map file must start with header 'external_key,dense_index'");
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    std::int64_t idx = 0;
    if (!csv::split_line(line, ',', f) || f.size() != 2 || !detail::parse_int(f[1], idx))
      throw DataError(fmt::format("id map line {}: malformed row", line_no));
    if (idx != static_cast<std::int64_t>(index.size()) || index.find(f[0]))
      throw DataError(fmt::format("id map line {}: indices must be contiguous and keys unique", line_no));
    index.intern(f[0]);
  }
  return index;
}

}  // namespace spbench
