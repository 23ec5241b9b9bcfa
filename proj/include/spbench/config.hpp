#pragma once

// Experiment configuration. The file format is INI: `[section]` headers and
// `key = value` lines, `#` or `;` comment lines. Values may be quoted and lists
// may be written either as `a, b, c` or `[a, b, c]`, so simple TOML files of
// the same shape are accepted too.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "spbench/dataset.hpp"
#include "spbench/protocol.hpp"
#include "spbench/shift.hpp"
#include "spbench/splitter.hpp"
#include "spbench/synth.hpp"

namespace spbench {

struct DataConfig {
  bool synthetic = false;  // generate from [synth] instead of reading `path`
  std::string path;
  ColumnSpec columns;
  std::optional<double> rating_threshold;
  std::optional<std::size_t> user_sample;
  std::uint64_t sample_seed = 0;
};

struct SplitConfig {
  SplitMode mode = SplitMode::equal_counts();
  std::size_t min_per_period = 2;
  bool pretrain = true;
};

struct ExperimentConfig {
  DataConfig data;
  SplitConfig split;
  ShiftConfig shift;
  KnnConfig uknn;
  BprConfig bprmf;
  NeuMfConfig neumf;
  std::vector<std::string> algorithms{"uknn", "bprmf", "neumf"};
  std::vector<MetricSpec> metrics{{"hit_ratio", 20}};
  SynthConfig synth;
  std::string out_dir = "spbench-out";
  std::uint64_t master_seed = 42;
  std::size_t jobs = 1;
  bool save_models = false;

  std::vector<AlgorithmConfig> algorithm_configs() const {
    std::vector<AlgorithmConfig> out;
    for (const auto& a : algorithms) {
      if (a == "uknn")
        out.emplace_back(uknn);
      else if (a == "bprmf")
        out.emplace_back(bprmf);
      else if (a == "neumf")
        out.emplace_back(neumf);
      else
        throw ConfigError(fmt::format("unknown algorithm '{}'", a));
    }
    return out;
  }
};

/// Command-line overrides applied on top of the file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> jobs;
  std::optional<double> shift_fraction;
  bool no_pretrain = false;
  bool skip_path_check = false;  // e.g. when the data file is about to be generated
};

namespace detail {

inline std::string unquote(std::string v) {
  // Drop trailing comments that sit outside quotes.
  bool quoted = false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '"') quoted = !quoted;
    if (!quoted && v[i] == '#' && (i == 0 || v[i - 1] == ' ' || v[i - 1] == '\t')) {
      v.erase(i);
      break;
    }
  }
  std::string t{csv::trim(v)};
  if (t.size() >= 2 && ((t.front() == '"' && t.back() == '"') || (t.front() == '\'' && t.back() == '\'')))
    t = t.substr(1, t.size() - 2);
  return t;
}

inline std::vector<std::string> split_list(std::string v) {
  v = unquote(v);
  if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto t = unquote(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

/// Collects every violation instead of stopping at the first.
class ConfigReader {
 public:
  explicit ConfigReader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    auto v = sec->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return unquote(*v);
  }

  template <typename T>
  void number(const std::string& section, const std::string& key, T& out) {
    auto v = raw(section, key);
    if (!v) return;
    if constexpr (std::is_floating_point_v<T>) {
      double d = 0;
      if (!parse_double(*v, d)) return bad(section, key, *v, "a number");
      out = static_cast<T>(d);
    } else {
      std::int64_t i = 0;
      if (!parse_int(*v, i) || i < 0) return bad(section, key, *v, "a non-negative integer");
      out = static_cast<T>(i);
    }
  }

  template <typename T>
  void number(const std::string& section, const std::string& key, std::optional<T>& out) {
    if (!raw(section, key)) return;
    T v{};
    number(section, key, v);
    out = v;
  }

  void boolean(const std::string& section, const std::string& key, bool& out) {
    auto v = raw(section, key);
    if (!v) return;
    if (*v == "true" || *v == "1" || *v == "yes")
      out = true;
    else if (*v == "false" || *v == "0" || *v == "no")
      out = false;
    else
      bad(section, key, *v, "true or false");
  }

  void string(const std::string& section, const std::string& key, std::string& out) {
    if (auto v = raw(section, key)) out = *v;
  }

  void timestamp(const std::string& section, const std::string& key, std::optional<Timestamp>& out) {
    auto v = raw(section, key);
    if (!v) return;
    if (auto t = parse_timestamp(*v))
      out = *t;
    else
      bad(section, key, *v, "epoch seconds or a YYYY-MM-DD date");
  }

  void column(const std::string& key, ColumnRef& out) {
    auto v = raw("data", key);
    if (!v) return;
    std::int64_t i = 0;
    if (parse_int(*v, i) && i >= 0)
      out = ColumnRef::at(static_cast<std::size_t>(i));
    else
      out = ColumnRef::named(*v);
  }

  void error(std::string msg) { errors_.push_back(std::move(msg)); }
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  void bad(const std::string& section, const std::string& key, const std::string& value, const char* expected) {
    errors_.push_back(fmt::format("[{}] {} = '{}': expected {}", section, key, value, expected));
  }

  const boost::property_tree::ptree& tree_;
  std::vector<std::string> errors_;
};

inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"seed", "algorithms", "metrics", "out", "jobs", "save_models"}},
      {"data",
       {"synthetic", "path", "delimiter", "header", "user_col", "item_col", "timestamp_col", "rating_col",
        "rating_threshold", "user_sample", "sample_seed"}},
      {"split", {"mode", "pretrain_end", "period1_end", "min_per_period", "pretrain"}},
      {"shift", {"fraction", "seed"}},
      {"uknn", {"k_neighbors"}},
      {"bprmf", {"dim", "learning_rate", "l2_reg", "epochs"}},
      {"neumf", {"gmf_dim", "mlp_dim", "hidden", "negatives_per_positive", "learning_rate", "epochs"}},
      {"synth",
       {"users", "items", "interactions", "clusters", "zipf", "drift", "explore", "positive_rate", "start", "end",
        "seed"}}};
  return keys;
}

}  // namespace detail

/// Parses and validates a configuration. Every violation is reported in one
/// ConfigError. Seeds that are not given explicitly are derived from the
/// master seed.
inline ExperimentConfig parse_config(std::istream& in, const ConfigOverrides& overrides = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("config syntax error: {}", e.what()));
  }
  ExperimentConfig cfg;
  detail::ConfigReader r(tree);
  for (const auto& [section, body] : tree) {
    auto known = detail::known_keys().find(section);
    if (known == detail::known_keys().end()) {
      r.error(fmt::format("unknown section [{}]", section));
      continue;
    }
    for (const auto& [key, value] : body)
      if (!known->second.contains(key)) r.error(fmt::format("[{}] unknown key '{}'", section, key));
  }

  // [experiment]
  r.number("experiment", "seed", cfg.master_seed);
  if (auto v = r.raw("experiment", "algorithms")) cfg.algorithms = detail::split_list(*v);
  if (auto v = r.raw("experiment", "metrics")) {
    cfg.metrics.clear();
    for (const auto& m : detail::split_list(*v)) {
      const auto at = m.find('@');
      MetricSpec spec{m.substr(0, at), 20};
      std::int64_t k = 20;
      if (at != std::string::npos && (!detail::parse_int(m.substr(at + 1), k) || k < 1))
        r.error(fmt::format("[experiment] metrics: bad cut-off in '{}'", m));
      spec.k = static_cast<std::size_t>(k);
      if (!is_known_metric(spec.name)) r.error(fmt::format("[experiment] metrics: unknown metric '{}'", spec.name));
      cfg.metrics.push_back(spec);
    }
  }
  r.string("experiment", "out", cfg.out_dir);
  r.number("experiment", "jobs", cfg.jobs);
  r.boolean("experiment", "save_models", cfg.save_models);
  if (overrides.seed) cfg.master_seed = *overrides.seed;
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  if (overrides.jobs) cfg.jobs = *overrides.jobs;

  // [data]
  r.boolean("data", "synthetic", cfg.data.synthetic);
  r.string("data", "path", cfg.data.path);
  if (auto d = r.raw("data", "delimiter")) {
    if (*d == "\\t" || *d == "tab")
      cfg.data.columns.delimiter = '\t';
    else if (d->size() == 1)
      cfg.data.columns.delimiter = d->front();
    else
      r.error(fmt::format("[data] delimiter = '{}': expected a single character", *d));
  }
  r.boolean("data", "header", cfg.data.columns.header);
  r.column("user_col", cfg.data.columns.user);
  r.column("item_col", cfg.data.columns.item);
  r.column("timestamp_col", cfg.data.columns.timestamp);
  if (r.raw("data", "rating_col")) {
    cfg.data.columns.rating = ColumnRef{};
    r.column("rating_col", *cfg.data.columns.rating);
  }
  r.number("data", "rating_threshold", cfg.data.rating_threshold);
  r.number("data", "user_sample", cfg.data.user_sample);
  cfg.data.sample_seed = derive_seed(cfg.master_seed, "sample");
  r.number("data", "sample_seed", cfg.data.sample_seed);

  // [split]
  std::string mode = "equal_counts";
  r.string("split", "mode", mode);
  std::optional<Timestamp> t0, t1;
  r.timestamp("split", "pretrain_end", t0);
  r.timestamp("split", "period1_end", t1);
  if (mode == "boundaries") {
    if (!t0 || !t1)
      r.error("[split] mode = boundaries needs pretrain_end and period1_end");
    else if (*t0 >= *t1)
      r.error("[split] pretrain_end must be earlier than period1_end");
    else
      cfg.split.mode = SplitMode::boundaries(*t0, *t1);
  } else if (mode == "equal_counts") {
    cfg.split.mode = SplitMode::equal_counts(t0);
  } else {
    r.error(fmt::format("[split] mode = '{}': expected boundaries or equal_counts", mode));
  }
  r.number("split", "min_per_period", cfg.split.min_per_period);
  r.boolean("split", "pretrain", cfg.split.pretrain);
  if (overrides.no_pretrain) cfg.split.pretrain = false;

  // [shift]
  r.number("shift", "fraction", cfg.shift.fraction);
  if (overrides.shift_fraction) cfg.shift.fraction = *overrides.shift_fraction;
  cfg.shift.seed = derive_seed(cfg.master_seed, "shift");
  r.number("shift", "seed", cfg.shift.seed);

  // Algorithm sections
  r.number("uknn", "k_neighbors", cfg.uknn.k_neighbors);
  r.number("bprmf", "dim", cfg.bprmf.dim);
  r.number("bprmf", "learning_rate", cfg.bprmf.learning_rate);
  r.number("bprmf", "l2_reg", cfg.bprmf.l2_reg);
  r.number("bprmf", "epochs", cfg.bprmf.epochs);
  r.number("neumf", "gmf_dim", cfg.neumf.gmf_dim);
  r.number("neumf", "mlp_dim", cfg.neumf.mlp_dim);
  if (auto v = r.raw("neumf", "hidden")) {
    cfg.neumf.hidden.clear();
    for (const auto& h : detail::split_list(*v)) {
      std::int64_t w = 0;
      if (!detail::parse_int(h, w) || w < 1)
        r.error(fmt::format("[neumf] hidden: bad width '{}'", h));
      else
        cfg.neumf.hidden.push_back(static_cast<std::size_t>(w));
    }
  }
  r.number("neumf", "negatives_per_positive", cfg.neumf.negatives_per_positive);
  r.number("neumf", "learning_rate", cfg.neumf.learning_rate);
  r.number("neumf", "epochs", cfg.neumf.epochs);

  // [synth]
  r.number("synth", "users", cfg.synth.users);
  r.number("synth", "items", cfg.synth.items);
  r.number("synth", "interactions", cfg.synth.interactions);
  r.number("synth", "clusters", cfg.synth.clusters);
  r.number("synth", "zipf", cfg.synth.zipf);
  r.number("synth", "drift", cfg.synth.drift);
  r.number("synth", "explore", cfg.synth.explore);
  r.number("synth", "positive_rate", cfg.synth.positive_rate);
  {
    std::optional<Timestamp> s, e;
    r.timestamp("synth", "start", s);
    r.timestamp("synth", "end", e);
    if (s) cfg.synth.start = *s;
    if (e) cfg.synth.end = *e;
  }
  cfg.synth.seed = derive_seed(cfg.master_seed, "synth");
  r.number("synth", "seed", cfg.synth.seed);

  // Semantic checks
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      r.error(e.what());
    }
  };
  if (!cfg.data.synthetic) {
    if (cfg.data.path.empty()) {
      r.error("[data] path is required unless synthetic = true");
    } else {
      std::filesystem::path p = cfg.data.path;
      if (const char* dir = std::getenv("SPBENCH_DATA_DIR"); dir && *dir && p.is_relative())
        p = std::filesystem::path(dir) / p;
      cfg.data.path = p.string();
      if (!overrides.skip_path_check && !std::filesystem::exists(p)) r.error(fmt::format("[data] path '{}' does not exist", cfg.data.path));
    }
  }
  if (!cfg.data.synthetic && cfg.data.rating_threshold && !cfg.data.columns.rating)
    r.error("[data] rating_threshold needs rating_col");
  if (cfg.data.user_sample && *cfg.data.user_sample == 0) r.error("[data] user_sample must be positive");
  if (cfg.split.min_per_period == 0) r.error("[split] min_per_period must be positive");
  if (!(cfg.shift.fraction >= 0.0 && cfg.shift.fraction <= 1.0))
    r.error(fmt::format("[shift] fraction = {}: must lie in [0, 1]", cfg.shift.fraction));
  if (cfg.algorithms.empty()) r.error("[experiment] algorithms must not be empty");
  for (const auto& a : cfg.algorithms)
    if (a != "uknn" && a != "bprmf" && a != "neumf") r.error(fmt::format("[experiment] unknown algorithm '{}'", a));
  if (cfg.metrics.empty()) r.error("[experiment] metrics must not be empty");
  if (cfg.jobs == 0) r.error("[experiment] jobs must be positive");
  if (cfg.uknn.k_neighbors == 0) r.error("[uknn] k_neighbors must be positive");
  check([&] { cfg.bprmf.validate(); });
  check([&] { cfg.neumf.validate(); });
  if (cfg.data.synthetic) check([&] { cfg.synth.validate(); });

  if (!r.errors().empty()) {
    std::string msg = fmt::format("invalid configuration ({} problem{}):", r.errors().size(),
                                  r.errors().size() == 1 ? "" : "s");
    for (const auto& e : r.errors()) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  return parse_config(in, overrides);
}

inline Json column_json(const ColumnRef& c) {
  if (c.index) return Json(*c.index);
  return Json(c.name);
}

/// Fully resolved configuration, defaults filled in.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  Json data{{"synthetic", c.data.synthetic},
            {"path", c.data.path},
            {"delimiter", std::string(1, c.data.columns.delimiter)},
            {"header", c.data.columns.header},
            {"user_col", column_json(c.data.columns.user)},
            {"item_col", column_json(c.data.columns.item)},
            {"timestamp_col", column_json(c.data.columns.timestamp)}};
  data["rating_col"] = c.data.columns.rating ? column_json(*c.data.columns.rating) : Json(nullptr);
  data["rating_threshold"] = c.data.rating_threshold ? Json(*c.data.rating_threshold) : Json(nullptr);
  data["user_sample"] = c.data.user_sample ? Json(*c.data.user_sample) : Json(nullptr);
  data["sample_seed"] = c.data.sample_seed;
  j["data"] = data;
  Json split;
  split["mode"] = c.split.mode.kind == SplitMode::Kind::by_boundaries ? "boundaries" : "equal_counts";
  split["pretrain_end"] = c.split.mode.t0_end ? Json(*c.split.mode.t0_end) : Json(nullptr);
  split["period1_end"] = c.split.mode.kind == SplitMode::Kind::by_boundaries ? Json(c.split.mode.t1_end) : Json(nullptr);
  split["min_per_period"] = c.split.min_per_period;
  split["pretrain"] = c.split.pretrain;
  j["split"] = split;
  j["shift"] = {{"fraction", c.shift.fraction}, {"seed", c.shift.seed}};
  j["experiment"] = {{"algorithms", c.algorithms}, {"seed", c.master_seed}, {"save_models", c.save_models}};
  Json metrics = Json::array();
  for (const auto& m : c.metrics) metrics.push_back(m.label());
  j["experiment"]["metrics"] = metrics;
  j["uknn"] = hyperparameters_json(c.uknn);
  j["bprmf"] = hyperparameters_json(c.bprmf);
  j["neumf"] = hyperparameters_json(c.neumf);
  if (c.data.synthetic)
    j["synth"] = {{"users", c.synth.users},
                  {"items", c.synth.items},
                  {"interactions", c.synth.interactions},
                  {"clusters", c.synth.clusters},
                  {"zipf", c.synth.zipf},
                  {"drift", c.synth.drift},
                  {"explore", c.synth.explore},
                  {"positive_rate", c.synth.positive_rate},
                  {"start", c.synth.start},
                  {"end", c.synth.end},
                  {"seed", c.synth.seed}};
  return j;
}

}  // namespace spbench
