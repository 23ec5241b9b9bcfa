#pragma once

// The stability/plasticity protocol: fit the legacy model M1 on pre-shift
// data and the retrained model M2 on everything, score both on both holdouts
// and derive the two measures from the resulting quad of scores.

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "spbench/bpr.hpp"
#include "spbench/knn.hpp"
#include "spbench/metrics.hpp"
#include "spbench/neumf.hpp"
#include "spbench/splitter.hpp"

namespace spbench {

inline constexpr const char* tool_version = "1.0.0";
inline constexpr int report_schema = 1;

using Json = nlohmann::ordered_json;

/// Scores of model Mi on holdout Dj, one metric at one cut-off.
struct ScoreQuad {
  std::string metric;
  std::size_t k = 20;
  double s11 = 0.0;
  double s12 = 0.0;
  double s21 = 0.0;
  double s22 = 0.0;
};

/// 1 - (S11 - S21). Not clipped: values above 1 mean M2 improved on old data.
inline double stability(const ScoreQuad& q) noexcept { return 1.0 - (q.s11 - q.s21); }

/// S22 - S12
inline double plasticity(const ScoreQuad& q) noexcept { return q.s22 - q.s12; }

using AlgorithmConfig = std::variant<KnnConfig, BprConfig, NeuMfConfig>;

inline std::string algorithm_name(const AlgorithmConfig& cfg) {
  return std::visit(
      [](const auto& c) -> std::string {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, KnnConfig>)
          return std::string(KnnModel::id);
        else if constexpr (std::is_same_v<C, BprConfig>)
          return std::string(BprModel::id);
        else
          return std::string(NeuMfModel::id);
      },
      cfg);
}

/// Hyperparameters as JSON; the seed is excluded (it is derived per model).
inline Json hyperparameters_json(const AlgorithmConfig& cfg) {
  return std::visit(
      [](const auto& c) -> Json {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, KnnConfig>) {
          return Json{{"k_neighbors", c.k_neighbors}};
        } else if constexpr (std::is_same_v<C, BprConfig>) {
          return Json{{"dim", c.dim}, {"learning_rate", c.learning_rate}, {"l2_reg", c.l2_reg}, {"epochs", c.epochs}};
        } else {
          return Json{{"gmf_dim", c.gmf_dim},
                      {"mlp_dim", c.mlp_dim},
                      {"hidden", c.hidden},
                      {"negatives_per_positive", c.negatives_per_positive},
                      {"learning_rate", c.learning_rate},
                      {"epochs", c.epochs}};
        }
      },
      cfg);
}

/// Model seed = derive_seed(master, algorithm name, fingerprint of its training
/// set). M1 and M2 therefore get independent seeds, and identical training sets
/// give identical models.
inline std::uint64_t model_seed(std::uint64_t master, const std::string& algorithm, const InteractionLog& train) {
  return derive_seed(master, algorithm, fingerprint(train));
}

struct MetricResult {
  ScoreQuad quad;
  double stability = 0.0;
  double plasticity = 0.0;
};

enum class Cell { m1_d1 = 0, m1_d2 = 1, m2_d1 = 2, m2_d2 = 3 };

inline constexpr std::array<const char*, 4> cell_names = {"M1_D1", "M1_D2", "M2_D1", "M2_D2"};

struct AlgorithmResult {
  std::string algorithm;
  Json hyperparameters;
  std::uint64_t seed_m1 = 0;
  std::uint64_t seed_m2 = 0;
  std::vector<MetricResult> metrics;
  std::optional<std::string> error;
  std::vector<std::string> warnings;
  // Run artifacts; not part of the JSON report.
  std::array<std::vector<UserResult>, 4> ranks;
  std::vector<double> losses_m1, losses_m2;
  std::string model_m1, model_m2;  // serialized models
};

struct SpReport {
  Json manifest = Json::object();
  std::vector<MetricSpec> metrics;
  std::vector<AlgorithmResult> algorithms;
};

struct RunOptions {
  std::size_t jobs = 1;
  bool keep_models = false;
};

namespace detail {

template <typename Model>
void fill_result(AlgorithmResult& res, const Model& m1, const Model& m2, const ExperimentSplits& splits,
                 std::span<const ItemId> catalog, std::span<const MetricSpec> metrics, const RunOptions& opt) {
  const InteractionLog* holdouts[] = {&splits.d1_test, &splits.d2_test};
  auto legacy = evaluate_holdouts(m1, holdouts, catalog, metrics, 20, opt.jobs);
  auto retrained = evaluate_holdouts(m2, holdouts, catalog, metrics, 20, opt.jobs);
  const EvalOutcome &e11 = legacy[0], &e12 = legacy[1], &e21 = retrained[0], &e22 = retrained[1];
  for (const auto& m : metrics) {
    const auto key = m.label();
    ScoreQuad q{m.name, m.k, e11.aggregate.at(key), e12.aggregate.at(key), e21.aggregate.at(key),
                e22.aggregate.at(key)};
    res.metrics.push_back({q, stability(q), plasticity(q)});
  }
  res.ranks = {e11.per_user, e12.per_user, e21.per_user, e22.per_user};
  if constexpr (requires { m1.epoch_losses(); }) {
    res.losses_m1 = m1.epoch_losses();
    res.losses_m2 = m2.epoch_losses();
  }
  if constexpr (requires { m1.warnings(); }) {
    for (const auto& w : m1.warnings()) res.warnings.push_back("M1: " + w);
    for (const auto& w : m2.warnings()) res.warnings.push_back("M2: " + w);
  }
  if (opt.keep_models) {
    std::ostringstream a, b;
    m1.save(a);
    m2.save(b);
    res.model_m1 = a.str();
    res.model_m2 = b.str();
  }
}

}  // namespace detail

/// Runs the full protocol for every algorithm. A failing algorithm gets a row
/// with its diagnostic; the others still run.
inline SpReport run_experiment(const ExperimentSplits& splits, std::span<const AlgorithmConfig> algorithms,
                               std::span<const MetricSpec> metrics, std::uint64_t master_seed,
                               const RunOptions& options = {}) {
  if (algorithms.empty()) throw ConfigError("no algorithms configured");
  for (const auto& m : metrics) {
    if (!is_known_metric(m.name)) throw ConfigError(fmt::format("unknown metric '{}'", m.name));
    if (m.k == 0) throw ConfigError(fmt::format("metric {} needs k >= 1", m.name));
  }
  const auto catalog = build_candidate_catalog(splits);

  SpReport report;
  report.metrics.assign(metrics.begin(), metrics.end());
  report.manifest["master_seed"] = master_seed;
  report.manifest["catalog_size"] = catalog.size();
  Json counts = Json::object();
  Json prints = Json::object();
  const std::array<std::pair<const char*, const InteractionLog*>, 7> parts = {
      {{"d0", &splits.d0},
       {"d1_train", &splits.d1_train},
       {"d1_test", &splits.d1_test},
       {"d2_train", &splits.d2_train},
       {"d2_test", &splits.d2_test},
       {"m1_train", &splits.m1_train},
       {"m2_train", &splits.m2_train}}};
  for (const auto& [name, log] : parts) {
    counts[name] = log->size();
    prints[name] = fmt::format("{:016x}", fingerprint(*log));
  }
  report.manifest["split_counts"] = counts;
  report.manifest["split_fingerprints"] = prints;

  for (const auto& algo : algorithms) {
    AlgorithmResult res;
    res.algorithm = algorithm_name(algo);
    res.hyperparameters = hyperparameters_json(algo);
    res.seed_m1 = model_seed(master_seed, res.algorithm, splits.m1_train);
    res.seed_m2 = model_seed(master_seed, res.algorithm, splits.m2_train);
    try {
      std::visit(
          [&](const auto& cfg) {
            using C = std::decay_t<decltype(cfg)>;
            C c1 = cfg, c2 = cfg;
            c1.seed = res.seed_m1;
            c2.seed = res.seed_m2;
            if constexpr (std::is_same_v<C, KnnConfig>) {
              detail::fill_result(res, fit_knn(splits.m1_train, c1), fit_knn(splits.m2_train, c2), splits, catalog,
                                  metrics, options);
            } else if constexpr (std::is_same_v<C, BprConfig>) {
              detail::fill_result(res, fit_bpr(splits.m1_train, c1), fit_bpr(splits.m2_train, c2), splits, catalog,
                                  metrics, options);
            } else {
              detail::fill_result(res, fit_neumf(splits.m1_train, c1), fit_neumf(splits.m2_train, c2), splits,
                                  catalog, metrics, options);
            }
          },
          algo);
    } catch (const std::exception& e) {
      res.metrics.clear();
      res.error = e.what();
    }
    report.algorithms.push_back(std::move(res));
  }
  return report;
}

/// Whether both latent-factor models show more plasticity than UKNN on the
/// first hit-ratio metric (null entries when an algorithm is missing).
inline Json direction_check(const SpReport& report) {
  Json out = Json::object();
  const MetricSpec* hr = nullptr;
  for (const auto& m : report.metrics)
    if (m.name == "hit_ratio") {
      hr = &m;
      break;
    }
  if (!hr) hr = report.metrics.empty() ? nullptr : &report.metrics.front();
  if (!hr) return nullptr;
  auto find = [&](const std::string& algo) -> std::optional<double> {
    for (const auto& a : report.algorithms) {
      if (a.algorithm != algo || a.error) continue;
      for (const auto& m : a.metrics)
        if (m.quad.metric == hr->name && m.quad.k == hr->k) return m.plasticity;
    }
    return std::nullopt;
  };
  const auto uknn = find("uknn"), bpr = find("bprmf"), neumf = find("neumf");
  out["metric"] = hr->label();
  out["bprmf_gt_uknn"] = (uknn && bpr) ? Json(*bpr > *uknn) : Json(nullptr);
  out["neumf_gt_uknn"] = (uknn && neumf) ? Json(*neumf > *uknn) : Json(nullptr);
  out["holds"] = (uknn && bpr && neumf) ? Json(*bpr > *uknn && *neumf > *uknn) : Json(nullptr);
  return out;
}

inline Json report_to_json(const SpReport& report) {
  Json j;
  j["schema"] = report_schema;
  j["tool"] = {{"name", "spbench"}, {"version", tool_version}};
  j["manifest"] = report.manifest;
  Json metrics = Json::array();
  for (const auto& m : report.metrics) metrics.push_back({{"name", m.name}, {"k", m.k}});
  j["metrics"] = metrics;
  Json results = Json::array();
  for (const auto& a : report.algorithms) {
    Json r;
    r["algorithm"] = a.algorithm;
    r["status"] = a.error ? "failed" : "ok";
    if (a.error) r["error"] = *a.error;
    r["hyperparameters"] = a.hyperparameters;
    r["seeds"] = {{"m1", a.seed_m1}, {"m2", a.seed_m2}};
    Json ms = Json::array();
    for (const auto& m : a.metrics)
      ms.push_back({{"metric", m.quad.metric},
                    {"k", m.quad.k},
                    {"S11", m.quad.s11},
                    {"S12", m.quad.s12},
                    {"S21", m.quad.s21},
                    {"S22", m.quad.s22},
                    {"stability", m.stability},
                    {"plasticity", m.plasticity}});
    r["metrics"] = ms;
    r["warnings"] = a.warnings;
    results.push_back(r);
  }
  j["results"] = results;
  j["direction_check"] = direction_check(report);
  return j;
}

/// Inverse of report_to_json for the parts stored in JSON.
inline SpReport report_from_json(const Json& j) {
  if (!j.contains("schema") || j.at("schema") != report_schema)
    throw DataError("report JSON has a missing or unsupported schema version");
  SpReport r;
  r.manifest = j.at("manifest");
  for (const auto& m : j.at("metrics")) r.metrics.push_back({m.at("name"), m.at("k")});
  for (const auto& a : j.at("results")) {
    AlgorithmResult res;
    res.algorithm = a.at("algorithm");
    if (a.contains("error")) res.error = a.at("error").get<std::string>();
    res.hyperparameters = a.at("hyperparameters");
    res.seed_m1 = a.at("seeds").at("m1");
    res.seed_m2 = a.at("seeds").at("m2");
    for (const auto& m : a.at("metrics")) {
      ScoreQuad q{m.at("metric"), m.at("k"), m.at("S11"), m.at("S12"), m.at("S21"), m.at("S22")};
      res.metrics.push_back({q, m.at("stability"), m.at("plasticity")});
    }
    res.warnings = a.at("warnings").get<std::vector<std::string>>();
    r.algorithms.push_back(std::move(res));
  }
  return r;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw IoError(fmt::format("cannot write {}", p.string()));
  return f;
}

}  // namespace detail

/// Writes report.json, table.csv, heatmap_<algorithm>.csv and report.txt.
inline void write_report_tables(const SpReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  detail::open_out(dir / "report.json") << report_to_json(report).dump(2) << '\n';

  auto table = detail::open_out(dir / "table.csv");
  table << "algorithm,metric,k,S11,S12,S21,S22,stability,plasticity\n";
  for (const auto& a : report.algorithms)
    for (const auto& m : a.metrics)
      table << fmt::format("{},{},{},{},{},{},{},{},{}\n", a.algorithm, m.quad.metric, m.quad.k, m.quad.s11,
                           m.quad.s12, m.quad.s21, m.quad.s22, m.stability, m.plasticity);

  for (const auto& a : report.algorithms) {
    auto heat = detail::open_out(dir / fmt::format("heatmap_{}.csv", a.algorithm));
    heat << "model,holdout,metric,k,score\n";
    for (const auto& m : a.metrics) {
      const auto& q = m.quad;
      heat << fmt::format("M1,D1,{},{},{}\n", q.metric, q.k, q.s11);
      heat << fmt::format("M1,D2,{},{},{}\n", q.metric, q.k, q.s12);
      heat << fmt::format("M2,D1,{},{},{}\n", q.metric, q.k, q.s21);
      heat << fmt::format("M2,D2,{},{},{}\n", q.metric, q.k, q.s22);
    }
  }

  auto txt = detail::open_out(dir / "report.txt");
  txt << fmt::format("{:<8} {:<14} {:>7} {:>7} {:>7} {:>7} {:>10} {:>10}\n", "algo", "metric", "S11", "S12", "S21",
                     "S22", "stability", "plasticity");
  for (const auto& a : report.algorithms) {
    if (a.error) {
      txt << fmt::format("{:<8} FAILED: {}\n", a.algorithm, *a.error);
      continue;
    }
    for (const auto& m : a.metrics)
      txt << fmt::format("{:<8} {:<14} {:>7.4f} {:>7.4f} {:>7.4f} {:>7.4f} {:>10.4f} {:>10.4f}\n", a.algorithm,
                         fmt::format("{}@{}", m.quad.metric, m.quad.k), m.quad.s11, m.quad.s12, m.quad.s21,
                         m.quad.s22, m.stability, m.plasticity);
  }
  const Json dir_check = direction_check(report);
  if (dir_check.is_object()) {
    auto show = [](const Json& v) { return v.is_null() ? std::string("n/a") : (v.get<bool>() ? "yes" : "no"); };
    txt << fmt::format("\nplasticity direction ({}): bprmf > uknn: {}, neumf > uknn: {}\n",
                       dir_check["metric"].get<std::string>(), show(dir_check["bprmf_gt_uknn"]),
                       show(dir_check["neumf_gt_uknn"]));
  }
}

/// Report tables plus per-user ranks, epoch-loss logs and saved models.
inline void write_report(const SpReport& report, const std::filesystem::path& dir) {
  write_report_tables(report, dir);
  for (const auto& a : report.algorithms) {
    if (a.error) continue;
    for (std::size_t c = 0; c < 4; ++c) {
      auto f = detail::open_out(dir / fmt::format("ranks_{}_{}.csv", a.algorithm, cell_names[c]));
      write_user_ranks(f, a.ranks[c]);
    }
    auto write_losses = [&](const std::vector<double>& losses, const char* model) {
      if (losses.empty()) return;
      auto f = detail::open_out(dir / fmt::format("train_{}_{}.csv", a.algorithm, model));
      f << "epoch,mean_loss\n";
      for (std::size_t e = 0; e < losses.size(); ++e) f << fmt::format("{},{}\n", e + 1, losses[e]);
    };
    write_losses(a.losses_m1, "M1");
    write_losses(a.losses_m2, "M2");
    if (!a.model_m1.empty()) {
      detail::open_out(dir / fmt::format("model_{}_M1.bin", a.algorithm), true) << a.model_m1;
      detail::open_out(dir / fmt::format("model_{}_M2.bin", a.algorithm), true) << a.model_m2;
    }
  }
}

}  // namespace spbench
