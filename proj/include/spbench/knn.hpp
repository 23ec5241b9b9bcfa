#pragma once

// User-based KNN over binary profiles with cosine similarity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "spbench/model.hpp"

namespace spbench {

struct KnnConfig {
  std::size_t k_neighbors = 50;
  std::uint64_t seed = 0;  // unused: fitting is deterministic
  bool cache_neighbors = true;
};

/// |a ∩ b| / sqrt(|a| * |b|) for sorted, duplicate-free profiles.
inline double cosine_similarity(std::span<const ItemId> a, std::span<const ItemId> b) {
  if (a.empty() || b.empty()) throw DataError("cosine similarity of an empty profile");
  std::size_t common = 0;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end() && ib != b.end();) {
    if (*ia < *ib)
      ++ia;
    else if (*ib < *ia)
      ++ib;
    else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(common) / std::sqrt(static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

struct Neighbor {
  UserId user = 0;
  double similarity = 0.0;
};

class KnnModel {
 public:
  static constexpr std::string_view id = "uknn";

  KnnModel(TrainingIndex training, KnnConfig config) : training_(std::move(training)), config_(config) {
    if (config_.k_neighbors == 0) throw ConfigError("uknn: k_neighbors must be positive");
    item_users_.resize(training_.item_capacity());
    norms_.assign(training_.user_capacity(), 0.0);
    for (UserId u : training_.known_users()) {
      const auto items = training_.items_of(u);
      norms_[u] = std::sqrt(static_cast<double>(items.size()));
      for (ItemId i : items) item_users_[i].push_back(u);
    }
    if (config_.cache_neighbors) {
      cache_.resize(training_.user_capacity());
      for (UserId u : training_.known_users()) cache_[u] = compute_neighbors(u);
    }
  }

  std::string_view algorithm_id() const noexcept { return id; }
  const TrainingIndex& training() const noexcept { return training_; }
  const KnnConfig& config() const noexcept { return config_; }
  std::span<const ItemId> profile(UserId u) const noexcept { return training_.items_of(u); }
  double norm(UserId u) const { return norms_.at(u); }

  /// Top-k most similar other users with positive similarity; ties by ascending index.
  std::vector<Neighbor> neighbors(UserId u) const {
    require_user(u);
    if (!cache_.empty()) return cache_[u];
    return compute_neighbors(u);
  }

  double score(UserId u, ItemId item) const {
    const auto nbrs = neighbors(u);
    double num = 0.0, den = 0.0;
    for (const auto& n : nbrs) {
      if (training_.has(n.user, item)) num += n.similarity;
      den += n.similarity;
    }
    return den > 0.0 ? num / den : 0.0;
  }

  void score_items(UserId u, std::span<const ItemId> items, std::span<double> out) const {
    const auto nbrs = neighbors(u);
    std::vector<double> acc(training_.item_capacity(), 0.0);
    double den = 0.0;
    for (const auto& n : nbrs) {
      for (ItemId i : training_.items_of(n.user)) acc[i] += n.similarity;
      den += n.similarity;
    }
    for (std::size_t j = 0; j < items.size(); ++j) {
      const double num = items[j] < acc.size() ? acc[items[j]] : 0.0;
      out[j] = den > 0.0 ? num / den : 0.0;
    }
  }

  void save(std::ostream& out) const {
    BinaryWriter w(out);
    w.header(id);
    w.u64(config_.k_neighbors);
    w.u64(config_.seed);
    w.u64(config_.cache_neighbors ? 1 : 0);
    w.training(training_);
  }

  static KnnModel load(std::istream& in) {
    BinaryReader r(in);
    r.header(id);
    KnnConfig cfg;
    cfg.k_neighbors = r.u64();
    cfg.seed = r.u64();
    cfg.cache_neighbors = r.u64() != 0;
    return KnnModel(r.training(), cfg);
  }

 private:
  void require_user(UserId u) const {
    if (!training_.knows_user(u)) throw DataError(fmt::format("uknn: unknown user {}", u));
  }

  std::vector<Neighbor> compute_neighbors(UserId u) const {
    std::vector<std::uint32_t> common(training_.user_capacity(), 0);
    std::vector<UserId> touched;
    for (ItemId i : training_.items_of(u))
      for (UserId v : item_users_[i]) {
        if (v == u) continue;
        if (common[v]++ == 0) touched.push_back(v);
      }
    const double size_u = static_cast<double>(training_.items_of(u).size());
    std::vector<Neighbor> all;
    all.reserve(touched.size());
    for (UserId v : touched) {
      const double size_v = static_cast<double>(training_.items_of(v).size());
      all.push_back({v, static_cast<double>(common[v]) / std::sqrt(size_u * size_v)});
    }
    auto better = [](const Neighbor& a, const Neighbor& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.user < b.user;
    };
    const std::size_t n = std::min(config_.k_neighbors, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), better);
    all.resize(n);
    return all;
  }

  TrainingIndex training_;
  KnnConfig config_;
  std::vector<std::vector<UserId>> item_users_;
  std::vector<double> norms_;
  std::vector<std::vector<Neighbor>> cache_;
};

inline KnnModel fit_knn(const InteractionLog& train, const KnnConfig& config = {}) {
  if (train.empty()) throw DataError("uknn: empty training set");
  return KnnModel(TrainingIndex(train), config);
}

}  // namespace spbench
