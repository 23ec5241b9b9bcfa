#pragma once

// Artificial concept shift: a sampled fraction of the items seen in the
// post-change period is relabeled to brand-new item indices, consistently
// across every occurrence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <fmt/format.h>

#include "spbench/dataset.hpp"

namespace spbench {

struct ShiftConfig {
  double fraction = 0.5;
  std::uint64_t seed = 0;
};

struct RelabelMap {
  std::map<ItemId, ItemId> entries;  // original -> fresh
  ItemId first_fresh = 0;            // fresh indices are [first_fresh, first_fresh + size)

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }

  friend bool operator==(const RelabelMap&, const RelabelMap&) = default;
};

/// floor(fraction * n + 0.5)
inline std::size_t shifted_item_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

/// Picks round_half_up(fraction * |d2_items|) distinct items uniformly at
/// random and numbers them from `id_map.next_item_index()` in ascending order
/// of their original index.
inline RelabelMap build_relabel_map(std::span<const ItemId> d2_items, const ShiftConfig& config,
                                    const IdMap& id_map) {
  if (!(config.fraction >= 0.0 && config.fraction <= 1.0))
    throw ConfigError(fmt::format("shift fraction {} outside [0, 1]", config.fraction));
  std::vector<ItemId> items(d2_items.begin(), d2_items.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  if (items.empty()) throw DataError("cannot build a relabel map over an empty item set");
  if (items.back() >= id_map.next_item_index())
    throw DataError("relabel source item is not registered in the id map");

  const std::size_t count = shifted_item_count(config.fraction, items.size());
  Xoshiro256 rng(config.seed);
  partial_shuffle(std::span<ItemId>(items), count, rng);
  std::vector<ItemId> chosen(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  RelabelMap map;
  map.first_fresh = id_map.next_item_index();
  ItemId next = map.first_fresh;
  for (ItemId original : chosen) map.entries.emplace(original, next++);
  return map;
}

/// Registers `<original_key>#shifted` for every fresh index.
inline void register_fresh_items(IdMap& ids, const RelabelMap& map) {
  if (map.first_fresh != ids.next_item_index())
    throw DataError("relabel map fresh range does not start at the id map's next item index");
  // Fresh indices follow ascending original order, which is the map's order.
  for (const auto& [original, fresh] : map.entries) {
    const auto index = ids.items.intern(ids.items.key(original) + "#shifted");
    if (index != fresh) throw DataError("fresh item key collides with an existing key");
  }
}

/// Replaces every mapped item by its fresh index; everything else is untouched.
inline InteractionLog apply_relabel(const InteractionLog& d2, const RelabelMap& map) {
  std::unordered_set<ItemId> present;
  for (const auto& x : d2) present.insert(x.item);
  for (const auto& [original, fresh] : map.entries)
    if (!present.contains(original))
      throw DataError(fmt::format("relabel map item {} does not occur in the log", original));
  InteractionLog out = d2;
  for (auto& x : out.interactions)
    if (auto it = map.entries.find(x.item); it != map.entries.end()) x.item = it->second;
  return out;
}

inline void write_relabel_map(std::ostream& out, const RelabelMap& map) {
  out << "original_index,fresh_index\n";
  for (const auto& [original, fresh] : map.entries) out << original << ',' << fresh << '\n';
}

inline RelabelMap read_relabel_map(std::istream& in, ItemId first_fresh) {
  RelabelMap map;
  map.first_fresh = first_fresh;
  std::string line;
  std::vector<std::string> f;
  if (!std::getline(in, line) || csv::trim(line) != "original_index,fresh_index")
    throw DataError("relabel map file must start with header 'original_index,fresh_index'");
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    std::int64_t a = 0, b = 0;
    if (!csv::split_line(line, ',', f) || f.size() != 2 || !detail::parse_int(f[0], a) ||
        !detail::parse_int(f[1], b) || a < 0 || b < 0)
      throw DataError("malformed relabel map row");
    map.entries.emplace(static_cast<ItemId>(a), static_cast<ItemId>(b));
  }
  return map;
}

}  // namespace spbench
