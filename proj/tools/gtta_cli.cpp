#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gtta/harness.hpp"
#include "gtta/io.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& preset_name, const std::vector<std::uint64_t>& seeds,
            const std::string& out, const std::vector<std::string>& overrides) {
  gtta::ExperimentConfig cfg;
  if (!preset_name.empty()) cfg = gtta::preset(preset_name);
  if (!config_path.empty()) {
    auto j = nlohmann::json(cfg);
    const auto file = gtta::io::read_json(config_path);
    // A file that brings its own methods replaces the preset's list rather than merging into it.
    if (file.contains("methods")) j.erase("methods");
    j.merge_patch(file);
    cfg = j.get<gtta::ExperimentConfig>();
  }
  if (preset_name.empty() && config_path.empty())
    throw gtta::ConfigurationError("run: give --config and/or --preset");
  if (!seeds.empty()) cfg.seeds = seeds;
  if (!out.empty()) cfg.out = out;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw gtta::ConfigurationError("--set expects key=value, got '" + o + "'");
    gtta::apply_override(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  const auto result = gtta::run_experiment(cfg, &std::cout);
  std::cout << "\n";
  gtta::print_report(result.table, std::cout);
  std::cout << "\nresults: " << (std::filesystem::path(cfg.out) / "results.csv").string() << "\n";
  for (const auto& f : result.failures)
    std::cerr << "failed cell " << f.method << " seed=" << f.seed << ": " << f.message << "\n";
  return result.ok() ? 0 : 1;
}

int cmd_report(const std::string& in) {
  const auto table = gtta::ResultTable::read_csv(std::filesystem::path(in) / "results.csv");
  gtta::print_report(table, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online test-time adaptation on a synthetic corruption benchmark"};
  app.require_subcommand(1);

  std::string config_path, preset_name, out, in;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;

  auto* run = app.add_subcommand("run", "Run an experiment and write results.csv");
  run->add_option("--config", config_path, "Experiment JSON")->check(CLI::ExistingFile);
  std::string presets_help = "Built-in experiment:";
  for (const auto& p : gtta::preset_names()) presets_help += " " + p;
  run->add_option("--preset", preset_name, presets_help);
  run->add_option("--seeds", seeds, "Seeds to run (default 0 1 2)");
  run->add_option("--out", out, "Output directory");
  run->add_option("--set", overrides, "Override a key, e.g. --set mixup.lambda=0.5");

  auto* report = app.add_subcommand("report", "Print tables from a results directory");
  report->add_option("--in", in, "Directory holding results.csv")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, preset_name, seeds, out, overrides);
    return cmd_report(in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
