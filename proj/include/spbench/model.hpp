#pragma once

// Shared contract for fitted recommenders, the evaluation candidate catalog
// and full-catalog top-K ranking with cold-item handling.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "spbench/dataset.hpp"
#include "spbench/splitter.hpp"

namespace spbench {

/// What a model saw during training: known users and items, and each user's
/// distinct training items (sorted).
class TrainingIndex {
 public:
  TrainingIndex() = default;

  explicit TrainingIndex(const InteractionLog& train) {
    UserId max_user = 0;
    ItemId max_item = 0;
    for (const auto& x : train) {
      max_user = std::max(max_user, x.user);
      max_item = std::max(max_item, x.item);
    }
    if (!train.empty()) {
      user_items_.resize(static_cast<std::size_t>(max_user) + 1);
      item_known_.assign(static_cast<std::size_t>(max_item) + 1, 0);
    }
    for (const auto& x : train) {
      user_items_[x.user].push_back(x.item);
      item_known_[x.item] = 1;
    }
    finish();
  }

  bool knows_user(UserId u) const noexcept { return u < user_items_.size() && !user_items_[u].empty(); }
  bool knows_item(ItemId i) const noexcept { return i < item_known_.size() && item_known_[i] != 0; }

  std::span<const ItemId> items_of(UserId u) const noexcept {
    if (u >= user_items_.size()) return {};
    return user_items_[u];
  }

  bool has(UserId u, ItemId i) const noexcept {
    const auto items = items_of(u);
    return std::binary_search(items.begin(), items.end(), i);
  }

  const std::vector<UserId>& known_users() const noexcept { return known_users_; }
  const std::vector<ItemId>& known_items() const noexcept { return known_items_; }
  std::size_t user_capacity() const noexcept { return user_items_.size(); }
  std::size_t item_capacity() const noexcept { return item_known_.size(); }

  /// Rebuilds from per-user item lists (used when loading models).
  static TrainingIndex from_user_items(std::vector<std::vector<ItemId>> user_items, std::size_t item_capacity) {
    TrainingIndex idx;
    idx.user_items_ = std::move(user_items);
    idx.item_known_.assign(item_capacity, 0);
    for (const auto& items : idx.user_items_)
      for (ItemId i : items) {
        if (i >= item_capacity) throw DataError("training index item out of range");
        idx.item_known_[i] = 1;
      }
    idx.finish();
    return idx;
  }

  const std::vector<std::vector<ItemId>>& user_items() const noexcept { return user_items_; }

 private:
  void finish() {
    known_users_.clear();
    known_items_.clear();
    for (std::size_t u = 0; u < user_items_.size(); ++u) {
      auto& items = user_items_[u];
      std::sort(items.begin(), items.end());
      items.erase(std::unique(items.begin(), items.end()), items.end());
      if (!items.empty()) known_users_.push_back(static_cast<UserId>(u));
    }
    for (std::size_t i = 0; i < item_known_.size(); ++i)
      if (item_known_[i]) known_items_.push_back(static_cast<ItemId>(i));
  }

  std::vector<std::vector<ItemId>> user_items_;
  std::vector<std::uint8_t> item_known_;
  std::vector<UserId> known_users_;
  std::vector<ItemId> known_items_;
};

/// A fitted, immutable recommender. `score` is defined for known (user, item)
/// pairs; `score_items` is the batch form and must agree with `score` bit for bit.
template <typename M>
concept RankingModel = requires(const M& m, UserId u, ItemId i, std::span<const ItemId> items,
                                std::span<double> out) {
  { m.algorithm_id() } -> std::convertible_to<std::string_view>;
  { m.training() } -> std::same_as<const TrainingIndex&>;
  { m.score(u, i) } -> std::convertible_to<double>;
  m.score_items(u, items, out);
};

struct RankedList {
  UserId user = 0;
  std::vector<ItemId> items;   // best first
  std::vector<double> scores;  // parallel to items, non-increasing
};

/// Score assigned to catalog items the model never saw in training.
inline constexpr double cold_item_score = -std::numeric_limits<double>::infinity();

/// Strict total order of ranked candidates: higher score first, then lower index.
struct RankOrder {
  bool operator()(const std::pair<double, ItemId>& a, const std::pair<double, ItemId>& b) const noexcept {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  }
};

/// Union of all items in m2_train, d1_test and d2_test, shared by M1 and M2.
inline std::vector<ItemId> build_candidate_catalog(const ExperimentSplits& splits) {
  std::vector<ItemId> items;
  for (const auto* log : {&splits.m2_train, &splits.d1_test, &splits.d2_test})
    for (const auto& x : *log) items.push_back(x.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

struct UserRanking {
  RankedList top;
  std::optional<std::size_t> truth_rank;  // 1-based rank in the full candidate ordering
};

struct UserRankings {
  RankedList top;
  std::vector<std::optional<std::size_t>> truth_ranks;  // parallel to the truths asked for
};

/// Ranks the catalog minus the user's training items. Cold items score
/// `cold_item_score` and therefore follow every known item, by ascending index.
/// Also reports the 1-based position of each truth in the full order (absent
/// if the truth is not a candidate).
template <RankingModel M>
UserRankings rank_user(const M& model, UserId user, std::span<const ItemId> catalog, std::size_t k,
                       std::span<const ItemId> truths) {
  if (k == 0) throw ConfigError("ranking cut-off k must be at least 1");
  const TrainingIndex& train = model.training();
  if (!train.knows_user(user))
    throw DataError(fmt::format("user {} is unknown to model {}", user, model.algorithm_id()));

  std::vector<ItemId> candidates(catalog.begin(), catalog.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const auto seen = train.items_of(user);
  std::vector<ItemId> fresh;
  fresh.reserve(candidates.size());
  std::set_difference(candidates.begin(), candidates.end(), seen.begin(), seen.end(), std::back_inserter(fresh));

  std::vector<ItemId> known;
  known.reserve(fresh.size());
  for (ItemId i : fresh)
    if (train.knows_item(i)) known.push_back(i);
  std::vector<double> known_scores(known.size());
  model.score_items(user, known, known_scores);

  std::vector<std::pair<double, ItemId>> scored;
  scored.reserve(fresh.size());
  std::size_t next_known = 0;
  for (ItemId i : fresh) {
    if (next_known < known.size() && known[next_known] == i) {
      const double s = known_scores[next_known++];
      if (std::isnan(s)) throw TrainingError(fmt::format("model {} produced NaN score", model.algorithm_id()));
      scored.emplace_back(s, i);
    } else {
      scored.emplace_back(cold_item_score, i);
    }
  }

  UserRankings result;
  result.top.user = user;
  for (ItemId truth : truths) {
    auto& rank = result.truth_ranks.emplace_back();
    auto it = std::find_if(scored.begin(), scored.end(), [&](const auto& p) { return p.second == truth; });
    if (it != scored.end()) {
      const auto key = *it;
      RankOrder before;
      rank = 1 + static_cast<std::size_t>(
                     std::count_if(scored.begin(), scored.end(), [&](const auto& p) { return before(p, key); }));
    }
  }

  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), RankOrder{});
  result.top.items.reserve(n);
  result.top.scores.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    result.top.scores.push_back(scored[r].first);
    result.top.items.push_back(scored[r].second);
  }
  return result;
}

template <RankingModel M>
UserRanking rank_user(const M& model, UserId user, std::span<const ItemId> catalog, std::size_t k,
                      std::optional<ItemId> truth = std::nullopt) {
  std::vector<ItemId> truths;
  if (truth) truths.push_back(*truth);
  auto r = rank_user(model, user, catalog, k, std::span<const ItemId>(truths));
  UserRanking one;
  one.top = std::move(r.top);
  if (truth) one.truth_rank = r.truth_ranks.front();
  return one;
}

template <RankingModel M>
RankedList rank_top_k(const M& model, UserId user, std::span<const ItemId> catalog, std::size_t k) {
  return rank_user(model, user, catalog, k).top;
}

// Binary model container ------------------------------------------------------

inline constexpr char model_magic[4] = {'S', 'P', 'B', 'M'};
inline constexpr std::uint32_t model_format_version = 1;

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void header(std::string_view algorithm_id) {
    out_.write(model_magic, 4);
    u64(model_format_version);
    str(algorithm_id);
  }
  void training(const TrainingIndex& idx) {
    u64(idx.item_capacity());
    u64(idx.user_items().size());
    for (const auto& items : idx.user_items()) {
      u64(items.size());
      for (ItemId i : items) u64(i);
    }
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  std::uint64_t u64() {
    unsigned char b[8];
    if (!in_.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated model file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = checked_size(u64());
    std::string s(n, '\0');
    if (!in_.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated model file");
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(checked_size(u64()));
    for (auto& x : v) x = f64();
    return v;
  }
  /// Checks magic, version and algorithm tag.
  void header(std::string_view expected_algorithm) {
    char magic[4];
    if (!in_.read(magic, 4) || std::memcmp(magic, model_magic, 4) != 0) throw IoError("not a model file");
    const auto version = u64();
    if (version != model_format_version) throw IoError(fmt::format("unsupported model format version {}", version));
    const auto algo = str();
    if (algo != expected_algorithm)
      throw IoError(fmt::format("model file holds '{}', expected '{}'", algo, expected_algorithm));
  }
  TrainingIndex training() {
    const auto item_capacity = checked_size(u64());
    std::vector<std::vector<ItemId>> user_items(checked_size(u64()));
    for (auto& items : user_items) {
      items.resize(checked_size(u64()));
      for (auto& i : items) i = static_cast<ItemId>(u64());
    }
    return TrainingIndex::from_user_items(std::move(user_items), item_capacity);
  }

 private:
  static std::size_t checked_size(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 34)) throw IoError("corrupt model file (size field too large)");
    return static_cast<std::size_t>(n);
  }
  std::istream& in_;
};

/// Peeks the algorithm tag of a serialized model without consuming the stream.
inline std::string peek_algorithm_id(std::istream& in) {
  const auto pos = in.tellg();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, model_magic, 4) != 0) throw IoError("not a model file");
  BinaryReader r(in);
  r.u64();
  auto id = r.str();
  in.seekg(pos);
  return id;
}

}  // namespace spbench
