#pragma once

// Stage orchestration: prepare -> shift -> split -> run. Each stage reads the
// previous stage's artifacts from disk and writes its own plus a manifest, so
// running the stages one by one gives the same files as `all`.
//
// Layout under the output directory:
//   prepare/ interactions.csv users.csv items.csv manifest.json
//   shift/   d0.csv d1.csv d2.csv relabel.csv items.csv manifest.json
//   split/   d0.csv d1_train.csv d1_test.csv d2_train.csv d2_test.csv manifest.json
//   run/     report.json table.csv heatmap_*.csv report.txt ranks_*.csv train_*.csv

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>

#include <fmt/format.h>

#include "spbench/config.hpp"
#include "spbench/dataset.hpp"
#include "spbench/protocol.hpp"
#include "spbench/shift.hpp"
#include "spbench/splitter.hpp"
#include "spbench/synth.hpp"

namespace spbench {

enum class Stage { prepare, shift, split, run, all };

namespace fs = std::filesystem;

namespace pipeline_detail {

inline std::ifstream open_in(const fs::path& p, const char* stage) {
  std::ifstream f(p);
  if (!f)
    throw IoError(fmt::format("missing artifact {} of stage '{}'; run `spbench {}` first", p.string(), stage, stage));
  return f;
}

inline void require_stage(const fs::path& out, const char* stage) {
  if (!fs::exists(out / stage / "manifest.json"))
    throw IoError(fmt::format("missing artifacts of stage '{}' in {}; run `spbench {}` first", stage, out.string(),
                              stage));
}

inline Json read_manifest(const fs::path& out, const char* stage) {
  require_stage(out, stage);
  auto in = open_in(out / stage / "manifest.json", stage);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(fmt::format("corrupt {} manifest: {}", stage, e.what()));
  }
}

inline InteractionLog read_log(const fs::path& p, const char* stage) {
  auto in = open_in(p, stage);
  return read_interactions(in);
}

inline void write_log(const fs::path& p, const InteractionLog& log) {
  auto f = detail::open_out(p);
  write_interactions(f, log);
}

inline void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", p.string(), ec.message()));
}

inline std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

inline Json log_summary(const InteractionLog& log) {
  return {{"interactions", log.size()},
          {"users", distinct_users(log).size()},
          {"items", distinct_items(log).size()},
          {"fingerprint", hex(fingerprint(log))}};
}

/// Equal-count periods move when users are removed, so filtering repeats
/// until no user violates the minimum. The log shrinks on every round, so
/// this terminates.
inline InteractionLog filter_equal_counts(InteractionLog log, const SplitMode& mode, std::size_t min_count) {
  for (;;) {
    const auto split = split_temporal(log, mode);
    std::unordered_map<UserId, std::pair<std::size_t, std::size_t>> counts;
    for (const auto& x : split.d1) ++counts[x.user].first;
    for (const auto& x : split.d2) ++counts[x.user].second;
    InteractionLog kept;
    for (const auto& x : log) {
      auto it = counts.find(x.user);
      const bool in_d0_only = it == counts.end();
      if (!in_d0_only && it->second.first >= min_count && it->second.second >= min_count)
        kept.interactions.push_back(x);
    }
    if (kept.size() == log.size()) return log;
    if (kept.empty()) throw EmptyResultError("no user meets the per-period minimum");
    log = std::move(kept);
  }
}

}  // namespace pipeline_detail

inline ParsedLog load_raw(const ExperimentConfig& cfg) {
  if (cfg.data.synthetic) {
    std::stringstream ss;
    generate_synthetic(ss, cfg.synth);
    ColumnSpec cols;
    cols.header = true;
    cols.user = ColumnRef::at(0);
    cols.item = ColumnRef::at(1);
    cols.rating = ColumnRef::at(2);
    cols.timestamp = ColumnRef::at(3);
    return parse_interactions(ss, cols, cfg.data.rating_threshold.value_or(5.0));
  }
  std::ifstream in(cfg.data.path);
  if (!in) throw IoError(fmt::format("cannot read data file '{}'", cfg.data.path));
  return parse_interactions(in, cfg.data.columns, cfg.data.rating_threshold);
}

/// Parse, sample users, keep users with enough interactions in both periods,
/// then renumber densely.
inline void stage_prepare(const ExperimentConfig& cfg) {
  using namespace pipeline_detail;
  const fs::path dir = fs::path(cfg.out_dir) / "prepare";
  make_dir(dir);
  auto parsed = load_raw(cfg);
  const std::size_t parsed_rows = parsed.log.size();
  InteractionLog log = parsed.log;
  if (cfg.data.user_sample) log = sample_users(log, *cfg.data.user_sample, cfg.data.sample_seed);
  const std::size_t sampled_rows = log.size();

  if (cfg.split.mode.kind == SplitMode::Kind::by_boundaries) {
    const Period periods[] = {{*cfg.split.mode.t0_end, cfg.split.mode.t1_end},
                              {cfg.split.mode.t1_end, std::numeric_limits<Timestamp>::max()}};
    log = filter_min_per_period(log, periods, cfg.split.min_per_period);
  } else {
    log = filter_equal_counts(std::move(log), cfg.split.mode, cfg.split.min_per_period);
  }
  if (log.empty()) throw EmptyResultError("no users left after the per-period filter");
  auto [dense, ids] = reindex_ids(log, &parsed.ids);

  write_log(dir / "interactions.csv", dense);
  {
    auto f = detail::open_out(dir / "users.csv");
    write_key_index(f, ids.users);
  }
  {
    auto f = detail::open_out(dir / "items.csv");
    write_key_index(f, ids.items);
  }
  Json m;
  m["stage"] = "prepare";
  m["config"] = config_to_json(cfg);
  m["rows"] = {{"parsed", parsed_rows}, {"after_sampling", sampled_rows}, {"after_filter", dense.size()}};
  m["dataset"] = log_summary(dense);
  detail::open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

/// Temporal split and shift injection on the second period.
inline void stage_shift(const ExperimentConfig& cfg) {
  using namespace pipeline_detail;
  const fs::path out = cfg.out_dir;
  const Json prep = read_manifest(out, "prepare");
  const InteractionLog log = read_log(out / "prepare" / "interactions.csv", "prepare");
  IdMap ids;
  {
    auto f = open_in(out / "prepare" / "items.csv", "prepare");
    ids.items = read_key_index(f);
  }
  const auto split = split_temporal(log, cfg.split.mode);
  const auto d2_items = distinct_items(split.d2);
  const auto map = build_relabel_map(d2_items, cfg.shift, ids);
  register_fresh_items(ids, map);
  const auto d2_shifted = apply_relabel(split.d2, map);

  const fs::path dir = out / "shift";
  make_dir(dir);
  write_log(dir / "d0.csv", split.d0);
  write_log(dir / "d1.csv", split.d1);
  write_log(dir / "d2.csv", d2_shifted);
  {
    auto f = detail::open_out(dir / "relabel.csv");
    write_relabel_map(f, map);
  }
  {
    auto f = detail::open_out(dir / "items.csv");
    write_key_index(f, ids.items);
  }
  Json m;
  m["stage"] = "shift";
  m["input_fingerprint"] = prep["dataset"]["fingerprint"];
  m["boundaries"] = {{"t0_end", split.t0_end}, {"t1_end", split.t1_end}};
  m["shift"] = {{"fraction", cfg.shift.fraction},
                {"seed", cfg.shift.seed},
                {"d2_items", d2_items.size()},
                {"relabeled_items", map.size()},
                {"first_fresh_index", map.first_fresh}};
  Fnv1a h;
  for (const auto& [a, b] : map.entries) {
    h.u64(a);
    h.u64(b);
  }
  m["shift"]["fingerprint"] = hex(h.value());
  m["periods"] = {{"d0", log_summary(split.d0)}, {"d1", log_summary(split.d1)}, {"d2", log_summary(d2_shifted)}};
  detail::open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

/// Leave-one-out holdouts for both periods.
inline void stage_split(const ExperimentConfig& cfg) {
  using namespace pipeline_detail;
  const fs::path out = cfg.out_dir;
  const Json sh = read_manifest(out, "shift");
  TemporalSplit split;
  split.d0 = read_log(out / "shift" / "d0.csv", "shift");
  split.d1 = read_log(out / "shift" / "d1.csv", "shift");
  split.d2 = read_log(out / "shift" / "d2.csv", "shift");
  split.t0_end = sh["boundaries"]["t0_end"];
  split.t1_end = sh["boundaries"]["t1_end"];
  const auto s = make_experiment_splits(split, cfg.split.pretrain);

  const fs::path dir = out / "split";
  make_dir(dir);
  write_log(dir / "d0.csv", s.d0);
  write_log(dir / "d1_train.csv", s.d1_train);
  write_log(dir / "d1_test.csv", s.d1_test);
  write_log(dir / "d2_train.csv", s.d2_train);
  write_log(dir / "d2_test.csv", s.d2_test);
  Json m;
  m["stage"] = "split";
  m["boundaries"] = sh["boundaries"];
  m["shift"] = sh["shift"];
  m["pretrain"] = cfg.split.pretrain;
  m["counts"] = {{"d0", s.d0.size()},
                 {"d1_train", s.d1_train.size()},
                 {"d1_test", s.d1_test.size()},
                 {"d2_train", s.d2_train.size()},
                 {"d2_test", s.d2_test.size()},
                 {"m1_train", s.m1_train.size()},
                 {"m2_train", s.m2_train.size()}};
  m["seeds"] = {{"master", cfg.master_seed}, {"sample", cfg.data.sample_seed}, {"shift", cfg.shift.seed}};
  detail::open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

inline ExperimentSplits load_splits(const fs::path& out) {
  using namespace pipeline_detail;
  require_stage(out, "split");
  ExperimentSplits s;
  s.d0 = read_log(out / "split" / "d0.csv", "split");
  s.d1_train = read_log(out / "split" / "d1_train.csv", "split");
  s.d1_test = read_log(out / "split" / "d1_test.csv", "split");
  s.d2_train = read_log(out / "split" / "d2_train.csv", "split");
  s.d2_test = read_log(out / "split" / "d2_test.csv", "split");
  s.m1_train = merge_logs({&s.d0, &s.d1_train});
  s.m2_train = merge_logs({&s.d0, &s.d1_train, &s.d2_train});
  return s;
}

/// Trains and evaluates every algorithm; returns false if any algorithm failed.
inline bool stage_run(const ExperimentConfig& cfg, std::ostream& log = std::cerr) {
  using namespace pipeline_detail;
  const fs::path out = cfg.out_dir;
  const Json sp = read_manifest(out, "split");
  const Json sh = read_manifest(out, "shift");
  const Json prep = read_manifest(out, "prepare");
  const auto splits = load_splits(out);
  const auto algorithms = cfg.algorithm_configs();
  RunOptions opt;
  opt.jobs = cfg.jobs;
  opt.keep_models = cfg.save_models;
  auto report = run_experiment(splits, algorithms, cfg.metrics, cfg.master_seed, opt);

  Json manifest;
  manifest["tool_version"] = tool_version;
  manifest["config"] = config_to_json(cfg);
  manifest["dataset"] = prep["dataset"];
  manifest["shift"] = sh["shift"];
  manifest["split"] = {{"boundaries", sp["boundaries"]}, {"pretrain", sp["pretrain"]}, {"counts", sp["counts"]}};
  manifest["seeds"] = sp["seeds"];
  for (auto& [k, v] : report.manifest.items()) manifest[k] = v;
  report.manifest = manifest;
  write_report(report, out / "run");

  bool ok = true;
  for (const auto& a : report.algorithms) {
    for (const auto& w : a.warnings) log << "warning: " << a.algorithm << ": " << w << '\n';
    if (a.error) {
      log << "error: " << a.algorithm << " failed: " << *a.error << '\n';
      ok = false;
    }
  }
  return ok;
}

/// Runs the requested stage(s). Returns false when training failed for some
/// algorithm; other failures throw spbench::Error.
inline bool run_pipeline(const ExperimentConfig& cfg, Stage stage, std::ostream& log = std::cerr) {
  switch (stage) {
    case Stage::prepare:
      stage_prepare(cfg);
      return true;
    case Stage::shift:
      stage_shift(cfg);
      return true;
    case Stage::split:
      stage_split(cfg);
      return true;
    case Stage::run:
      return stage_run(cfg, log);
    case Stage::all:
      stage_prepare(cfg);
      stage_shift(cfg);
      stage_split(cfg);
      return stage_run(cfg, log);
  }
  return true;
}

}  // namespace spbench
