#include <algorithm>
#include <map>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "spbench/splitter.hpp"

using namespace spbench;
using fixture::log_of;

namespace {

using Key = std::tuple<UserId, ItemId, Timestamp>;

std::multiset<Key> keys(const InteractionLog& log) {
  std::multiset<Key> s;
  for (const auto& x : log) s.emplace(x.user, x.item, x.timestamp);
  return s;
}

bool disjoint(const InteractionLog& a, const InteractionLog& b) {
  const auto ka = keys(a);
  return std::none_of(b.begin(), b.end(), [&](const auto& x) { return ka.contains({x.user, x.item, x.timestamp}); });
}

bool contains_all(const InteractionLog& big, const InteractionLog& small) {
  const auto kb = keys(big);
  const auto ks = keys(small);
  return std::includes(kb.begin(), kb.end(), ks.begin(), ks.end());
}

}  // namespace

TEST(TemporalSplit, EqualCountsHalves) {
  InteractionLog log;
  for (Timestamp t = 0; t < 10; ++t) log.interactions.push_back({0, static_cast<ItemId>(t), t});
  const auto s = split_temporal(log, SplitMode::equal_counts());
  EXPECT_EQ(s.d0.size(), 0u);
  EXPECT_EQ(s.d1.size(), 5u);
  EXPECT_EQ(s.d2.size(), 5u);
  EXPECT_EQ(s.d2.interactions.front().timestamp, 5);
}

TEST(TemporalSplit, EqualCountsAfterPretraining) {
  InteractionLog log;
  for (Timestamp t = 0; t < 13; ++t) log.interactions.push_back({0, static_cast<ItemId>(t), t});
  const auto s = split_temporal(log, SplitMode::equal_counts(Timestamp{2}));
  EXPECT_EQ(s.d0.size(), 2u);
  EXPECT_EQ(s.d1.size(), 6u);
  EXPECT_EQ(s.d2.size(), 5u);
}

TEST(TemporalSplit, CalendarYears) {
  const Timestamp y2013 = *parse_timestamp("2013-01-01");
  const Timestamp y2014 = *parse_timestamp("2014-01-01");
  const auto log = log_of({{0, 0, y2013 - 1}, {0, 1, y2013}, {0, 2, y2014 - 1}, {0, 3, y2014}, {0, 4, y2014 + 5}});
  const auto s = split_temporal(log, SplitMode::boundaries(y2013, y2014));
  EXPECT_EQ(s.d0, log_of({{0, 0, y2013 - 1}}));
  EXPECT_EQ(s.d1, log_of({{0, 1, y2013}, {0, 2, y2014 - 1}}));
  EXPECT_EQ(s.d2.size(), 2u);
}

TEST(TemporalSplit, EmptyPeriodsAndBadBoundaries) {
  const auto early = log_of({{0, 0, 1}, {0, 1, 2}});
  EXPECT_THROW(split_temporal(early, SplitMode::boundaries(10, 20)), DataError);
  EXPECT_THROW(split_temporal(log_of({{0, 0, 12}, {0, 1, 13}}), SplitMode::boundaries(10, 20)), DataError);
  EXPECT_THROW(split_temporal(early, SplitMode::boundaries(20, 10)), ConfigError);
  EXPECT_THROW(split_temporal(log_of({{0, 0, 1}}), SplitMode::equal_counts()), DataError);
}

TEST(LeaveOneOut, LatestInteractionHeldOut) {
  const auto [train, test] = leave_one_out(log_of({{1, 10, 1}, {1, 11, 2}, {1, 12, 3}}));
  EXPECT_EQ(test, log_of({{1, 12, 3}}));
  EXPECT_EQ(train.size(), 2u);
}

TEST(LeaveOneOut, TiesGoToLaterInStableOrder) {
  const auto [train, test] = leave_one_out(log_of({{1, 10, 5}, {1, 11, 5}}));
  EXPECT_EQ(test, log_of({{1, 11, 5}}));
  EXPECT_EQ(train, log_of({{1, 10, 5}}));
}

TEST(LeaveOneOut, SingleInteractionUserIsAnError) {
  EXPECT_THROW(leave_one_out(log_of({{1, 10, 1}, {1, 11, 2}, {2, 3, 3}})), DataError);
}

TEST(LeaveOneOut, HundredUserPeriod) {
  const auto period = fixture::dense_log(12, 100, 60, 4);
  const auto [train, test] = leave_one_out(period);
  EXPECT_EQ(test.size(), 100u);
  EXPECT_EQ(distinct_users(test).size(), 100u);
  EXPECT_EQ(keys(merge_logs({&train, &test})), keys(period));
  for (const auto& held : test) {
    for (const auto& x : train) {
      if (x.user == held.user) {
        EXPECT_LE(x.timestamp, held.timestamp);
      }
    }
  }
}

TEST(Assemble, EmptyPretrainingAndCounts) {
  TemporalSplit split;
  const auto d1_train = fixture::random_log(1, 5, 9, 20);
  const auto d2_train = fixture::random_log(2, 5, 9, 30);
  auto [m1, m2] = assemble_training_sets(split, d1_train, d2_train);
  EXPECT_EQ(m1, d1_train);

  split.d0 = fixture::random_log(3, 5, 9, 10);
  std::tie(m1, m2) = assemble_training_sets(split, d1_train, d2_train);
  EXPECT_EQ(m1.size(), 30u);
  EXPECT_EQ(m2.size(), 60u);
  std::tie(m1, m2) = assemble_training_sets(split, d1_train, d2_train, false);
  EXPECT_EQ(m1.size(), 20u);
  EXPECT_EQ(m2.size(), 50u);
}

TEST(ExperimentSplits, Integrity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // every user is active in every third of the timeline
    InteractionLog log;
    for (Timestamp band = 0; band < 3; ++band) {
      const auto part = fixture::dense_log(seed * 7 + static_cast<std::uint64_t>(band), 40, 80, 3, band * 100,
                                           band * 100 + 100);
      log.interactions.insert(log.interactions.end(), part.begin(), part.end());
    }
    const auto split = split_temporal(log, SplitMode::boundaries(100, 200));
    const auto s = make_experiment_splits(split);
    EXPECT_EQ(s.d1_test.size(), distinct_users(split.d1).size());
    EXPECT_EQ(s.d2_test.size(), distinct_users(split.d2).size());
    EXPECT_EQ(distinct_users(s.d1_test).size(), s.d1_test.size());
    EXPECT_EQ(distinct_users(s.d2_test).size(), s.d2_test.size());
    for (const auto* test : {&s.d1_test, &s.d2_test})
      for (const auto* train : {&s.m1_train, &s.m2_train}) EXPECT_TRUE(disjoint(*train, *test));
    EXPECT_TRUE(contains_all(s.m2_train, s.m1_train));
    EXPECT_EQ(s.m2_train.size(), s.m1_train.size() + s.d2_train.size());
    EXPECT_TRUE(std::is_sorted(s.m2_train.begin(), s.m2_train.end(),
                               [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; }));
  }
}
