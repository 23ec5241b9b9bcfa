#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "spbench/shift.hpp"

using namespace spbench;
using fixture::log_of;

namespace {

IdMap id_map_with(std::size_t items) {
  IdMap ids;
  for (std::size_t i = 0; i < items; ++i) ids.items.intern("b" + std::to_string(i));
  return ids;
}

}  // namespace

TEST(ShiftCount, RoundsHalfUp) {
  EXPECT_EQ(shifted_item_count(0.5, 10), 5u);
  EXPECT_EQ(shifted_item_count(0.5, 7), 4u);
  EXPECT_EQ(shifted_item_count(0.25, 6), 2u);
  EXPECT_EQ(shifted_item_count(0.0, 9), 0u);
  EXPECT_EQ(shifted_item_count(1.0, 9), 9u);
}

TEST(RelabelMap, HalfOfTenItems) {
  std::vector<ItemId> items{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto map = build_relabel_map(items, {0.5, 11}, id_map_with(10));
  EXPECT_EQ(map.size(), 5u);
  EXPECT_EQ(map.first_fresh, 10u);
}

TEST(RelabelMap, ZeroFractionIsEmpty) {
  std::vector<ItemId> items{1, 2, 3};
  EXPECT_TRUE(build_relabel_map(items, {0.0, 1}, id_map_with(5)).empty());
}

TEST(RelabelMap, FullShiftNumbersInAscendingOrder) {
  std::vector<ItemId> items{7, 3, 7};
  const auto map = build_relabel_map(items, {1.0, 5}, id_map_with(100));
  const std::map<ItemId, ItemId> expected{{3, 100}, {7, 101}};
  EXPECT_EQ(map.entries, expected);
}

TEST(RelabelMap, SeedDecidesSelection) {
  std::vector<ItemId> items(50);
  for (ItemId i = 0; i < 50; ++i) items[i] = i;
  const auto ids = id_map_with(50);
  EXPECT_EQ(build_relabel_map(items, {0.3, 9}, ids), build_relabel_map(items, {0.3, 9}, ids));
  EXPECT_NE(build_relabel_map(items, {0.3, 9}, ids), build_relabel_map(items, {0.3, 10}, ids));
}

TEST(RelabelMap, Errors) {
  std::vector<ItemId> items{1, 2};
  EXPECT_THROW(build_relabel_map(items, {1.5, 1}, id_map_with(3)), ConfigError);
  EXPECT_THROW(build_relabel_map(items, {-0.1, 1}, id_map_with(3)), ConfigError);
  EXPECT_THROW(build_relabel_map({}, {0.5, 1}, id_map_with(3)), DataError);
  EXPECT_THROW(build_relabel_map(items, {0.5, 1}, id_map_with(2)), DataError);
}

TEST(ApplyRelabel, ConsistentAcrossOccurrences) {
  // A=4, B=5, A'=9
  const auto d2 = log_of({{1, 4, 1}, {2, 4, 2}, {1, 5, 3}});
  RelabelMap map;
  map.first_fresh = 9;
  map.entries = {{4, 9}};
  EXPECT_EQ(apply_relabel(d2, map), log_of({{1, 9, 1}, {2, 9, 2}, {1, 5, 3}}));
  EXPECT_EQ(apply_relabel(d2, RelabelMap{}), d2);
}

TEST(ApplyRelabel, UnknownItemInMapRejected) {
  RelabelMap map;
  map.first_fresh = 9;
  map.entries = {{6, 9}};
  EXPECT_THROW(apply_relabel(log_of({{1, 4, 1}}), map), DataError);
}

TEST(ApplyRelabel, HistogramPreserved) {
  const auto d2 = fixture::random_log(7, 30, 40, 200);
  const auto ids = id_map_with(40);
  const auto items = distinct_items(d2);
  const auto map = build_relabel_map(items, {0.5, 7}, ids);
  const auto shifted = apply_relabel(d2, map);

  std::map<ItemId, std::size_t> before, after;
  for (const auto& x : d2) ++before[x.item];
  for (const auto& x : shifted) ++after[x.item];
  ASSERT_EQ(before.size(), after.size());
  for (const auto& [item, n] : before) {
    auto it = map.entries.find(item);
    const ItemId target = it == map.entries.end() ? item : it->second;
    EXPECT_EQ(after[target], n) << "item " << item;
  }
  for (std::size_t k = 0; k < d2.size(); ++k) {
    EXPECT_EQ(shifted.interactions[k].user, d2.interactions[k].user);
    EXPECT_EQ(shifted.interactions[k].timestamp, d2.interactions[k].timestamp);
  }
  for (const auto& [original, fresh] : map.entries) EXPECT_GE(fresh, ids.next_item_index());
}

TEST(RegisterFresh, ExtendsIdMap) {
  auto ids = id_map_with(4);
  std::vector<ItemId> items{1, 3};
  const auto map = build_relabel_map(items, {1.0, 0}, ids);
  register_fresh_items(ids, map);
  EXPECT_EQ(ids.items.size(), 6u);
  EXPECT_EQ(ids.items.key(4), "b1#shifted");
  EXPECT_EQ(ids.items.key(5), "b3#shifted");
  EXPECT_THROW(register_fresh_items(ids, map), DataError);
}

TEST(RelabelMapFile, RoundTrip) {
  std::vector<ItemId> items(30);
  for (ItemId i = 0; i < 30; ++i) items[i] = i;
  const auto map = build_relabel_map(items, {0.4, 3}, id_map_with(30));
  std::stringstream s;
  write_relabel_map(s, map);
  EXPECT_EQ(read_relabel_map(s, map.first_fresh), map);
}
