#pragma once

// Temporal periods, per-period leave-one-out holdouts and the two training
// sets of the legacy (M1) and retrained (M2) models.

#include <algorithm>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "spbench/dataset.hpp"

namespace spbench {

struct SplitMode {
  enum class Kind { by_boundaries, equal_counts };

  Kind kind = Kind::equal_counts;
  std::optional<Timestamp> t0_end;  // end of the pre-training period; required for by_boundaries
  Timestamp t1_end = 0;             // end of the first period; by_boundaries only

  static SplitMode boundaries(Timestamp t0_end, Timestamp t1_end) {
    return {Kind::by_boundaries, t0_end, t1_end};
  }
  static SplitMode equal_counts(std::optional<Timestamp> t0_end = std::nullopt) {
    return {Kind::equal_counts, t0_end, 0};
  }
};

struct TemporalSplit {
  InteractionLog d0;
  InteractionLog d1;
  InteractionLog d2;
  Timestamp t0_end = 0;  // first timestamp not in d0
  Timestamp t1_end = 0;  // first timestamp not in d1
};

struct ExperimentSplits {
  InteractionLog d0;
  InteractionLog d1_train;
  InteractionLog d1_test;
  InteractionLog d2_train;
  InteractionLog d2_test;
  InteractionLog m1_train;
  InteractionLog m2_train;
};

/// Intervals are inclusive-left, exclusive-right. In equal-count mode the
/// first half of the post-pretraining interactions (by sort order) forms d1;
/// on odd counts d1 gets the extra one.
inline TemporalSplit split_temporal(const InteractionLog& log, const SplitMode& mode) {
  TemporalSplit split;
  const Timestamp t0 = mode.t0_end.value_or(log.empty() ? 0 : log.interactions.front().timestamp);
  if (mode.kind == SplitMode::Kind::by_boundaries) {
    if (!mode.t0_end) throw ConfigError("boundary split needs the end of the pre-training period");
    if (t0 >= mode.t1_end) throw ConfigError("split boundaries must satisfy t0_end < t1_end");
    for (const auto& x : log) {
      if (x.timestamp < t0)
        split.d0.interactions.push_back(x);
      else if (x.timestamp < mode.t1_end)
        split.d1.interactions.push_back(x);
      else
        split.d2.interactions.push_back(x);
    }
    split.t0_end = t0;
    split.t1_end = mode.t1_end;
  } else {
    std::vector<Interaction> post;
    for (const auto& x : log) {
      if (x.timestamp < t0)
        split.d0.interactions.push_back(x);
      else
        post.push_back(x);
    }
    const std::size_t d1_size = (post.size() + 1) / 2;
    split.d1.interactions.assign(post.begin(), post.begin() + static_cast<std::ptrdiff_t>(d1_size));
    split.d2.interactions.assign(post.begin() + static_cast<std::ptrdiff_t>(d1_size), post.end());
    split.t0_end = t0;
    split.t1_end = split.d2.empty() ? t0 : split.d2.interactions.front().timestamp;
  }
  if (split.d1.empty()) throw DataError("temporal split produced an empty first period (D1)");
  if (split.d2.empty()) throw DataError("temporal split produced an empty second period (D2)");
  return split;
}

/// Holds out each user's latest interaction (ties: last in stable order).
inline std::pair<InteractionLog, InteractionLog> leave_one_out(const InteractionLog& period) {
  std::unordered_map<UserId, std::pair<std::size_t, std::size_t>> last_and_count;
  for (std::size_t i = 0; i < period.size(); ++i) {
    auto& [last, count] = last_and_count[period.interactions[i].user];
    last = i;
    ++count;
  }
  InteractionLog train, test;
  for (std::size_t i = 0; i < period.size(); ++i) {
    const auto& x = period.interactions[i];
    const auto& [last, count] = last_and_count.at(x.user);
    if (count < 2)
      throw DataError(fmt::format("user {} has a single interaction in the period; "
                                  "leave-one-out needs at least two (filter users first)",
                                  x.user));
    (i == last ? test : train).interactions.push_back(x);
  }
  return {std::move(train), std::move(test)};
}

inline InteractionLog merge_logs(std::initializer_list<const InteractionLog*> parts) {
  InteractionLog out;
  for (const auto* p : parts) out.interactions.insert(out.interactions.end(), p->begin(), p->end());
  std::stable_sort(out.interactions.begin(), out.interactions.end(),
                   [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
  return out;
}

/// m1 = d0 + d1_train, m2 = d0 + d1_train + d2_train (d0 dropped when
/// `include_d0` is false).
inline std::pair<InteractionLog, InteractionLog> assemble_training_sets(const TemporalSplit& split,
                                                                        const InteractionLog& d1_train,
                                                                        const InteractionLog& d2_train,
                                                                        bool include_d0 = true) {
  static const InteractionLog empty;
  const InteractionLog& d0 = include_d0 ? split.d0 : empty;
  return {merge_logs({&d0, &d1_train}), merge_logs({&d0, &d1_train, &d2_train})};
}

/// Leave-one-out on both periods plus the assembled training sets. `split.d2`
/// is expected to already carry the injected shift.
inline ExperimentSplits make_experiment_splits(const TemporalSplit& split, bool include_d0 = true) {
  ExperimentSplits s;
  s.d0 = include_d0 ? split.d0 : InteractionLog{};
  std::tie(s.d1_train, s.d1_test) = leave_one_out(split.d1);
  std::tie(s.d2_train, s.d2_test) = leave_one_out(split.d2);
  std::tie(s.m1_train, s.m2_train) = assemble_training_sets(split, s.d1_train, s.d2_train, include_d0);
  return s;
}

}  // namespace spbench
