// spbench: stability/plasticity benchmark for recommender models.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "spbench/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  std::optional<double> shift_fraction;
  bool no_pretrain = false;
};

spbench::ExperimentConfig resolve(const GlobalFlags& g, bool skip_path_check = false) {
  spbench::ConfigOverrides o;
  o.seed = g.seed;
  o.out_dir = g.out;
  o.jobs = g.jobs;
  o.shift_fraction = g.shift_fraction;
  o.no_pretrain = g.no_pretrain;
  o.skip_path_check = skip_path_check;
  if (g.config.empty()) {
    std::istringstream empty("[data]\nsynthetic = true\n");
    return spbench::parse_config(empty, o);
  }
  return spbench::load_config(g.config, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spbench - measure stability and plasticity of recommender models"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config,-c", g.config, "Experiment config file (INI / simple TOML)");
  app.add_option("--seed", g.seed, "Master seed (overrides [experiment] seed)");
  app.add_option("--out,-o", g.out, "Output directory (overrides [experiment] out)");
  app.add_option("--jobs,-j", g.jobs, "Evaluation threads")->check(CLI::PositiveNumber);
  app.add_option("--shift-fraction", g.shift_fraction, "Fraction of D2 items to relabel")->check(CLI::Range(0.0, 1.0));
  app.add_flag("--no-pretrain", g.no_pretrain, "Leave D0 out of both training sets");

  auto* prepare = app.add_subcommand("prepare", "Parse, sample and filter the raw interactions");
  auto* shift = app.add_subcommand("shift", "Split into periods and inject the item shift into D2");
  auto* split = app.add_subcommand("split", "Leave-one-out holdouts and training sets");
  auto* run = app.add_subcommand("run", "Train M1/M2 for every algorithm, evaluate, write the report");
  auto* report = app.add_subcommand("report", "Rewrite report tables from run/report.json and print them");
  auto* all = app.add_subcommand("all", "prepare + shift + split + run");
  auto* synth = app.add_subcommand("synth", "Write a synthetic raw interaction file");
  std::string synth_path;
  synth->add_option("output", synth_path, "Destination CSV (defaults to [data] path)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      auto cfg = resolve(g, true);
      const std::string path = synth_path.empty() ? cfg.data.path : synth_path;
      if (path.empty()) throw spbench::ConfigError("synth needs an output path");
      std::ofstream out(path);
      if (!out) throw spbench::IoError(fmt::format("cannot write {}", path));
      spbench::generate_synthetic(out, cfg.synth);
      std::cout << "wrote " << path << '\n';
      return 0;
    }
    const auto cfg = resolve(g);
    if (*report) {
      const auto dir = std::filesystem::path(cfg.out_dir) / "run";
      std::ifstream in(dir / "report.json");
      if (!in) throw spbench::IoError(fmt::format("missing {}; run `spbench run` first", (dir / "report.json").string()));
      const auto rep = spbench::report_from_json(spbench::Json::parse(in));
      spbench::write_report_tables(rep, dir);
      std::ifstream txt(dir / "report.txt");
      std::cout << txt.rdbuf();
      return 0;
    }
    spbench::Stage stage = spbench::Stage::all;
    if (*prepare)
      stage = spbench::Stage::prepare;
    else if (*shift)
      stage = spbench::Stage::shift;
    else if (*split)
      stage = spbench::Stage::split;
    else if (*run)
      stage = spbench::Stage::run;
    else if (*all)
      stage = spbench::Stage::all;
    const bool ok = spbench::run_pipeline(cfg, stage, std::cerr);
    if (stage == spbench::Stage::run || stage == spbench::Stage::all) {
      std::ifstream txt(std::filesystem::path(cfg.out_dir) / "run" / "report.txt");
      std::cout << txt.rdbuf();
    }
    return ok ? 0 : static_cast<int>(spbench::ErrorKind::training);
  } catch (const spbench::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
