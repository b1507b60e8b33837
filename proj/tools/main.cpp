#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tokweight/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Token-weighted long-context training laboratory"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t parallel = 1;
  std::vector<std::string> grids;

  const char* commands[][2] = {
      {"gen", "Generate a training corpus"},
      {"train", "Weighted continual training; writes model.ckpt and run.jsonl"},
      {"score", "Score a corpus; writes a score cache and per-sequence dumps"},
      {"eval", "Run the mini-RULER benchmark on a checkpoint"},
      {"dump-weights", "Write per-token losses, scores and weights for one sequence"},
      {"sweep", "Train and evaluate one run per grid value"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Config file (section.key = value)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output root directory");
    sub->add_option("--seed", seed, "Global seed");
    if (std::string(name) == "sweep") {
      sub->add_option("--grid", grids, "NAME=v1,v2,...")->required();
      sub->add_option("--parallel", parallel, "Grid points run concurrently")->check(CLI::PositiveNumber);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? tokweight::kExitOk : tokweight::kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();

  try {
    auto config = tokweight::RunConfig::load(config_path);
    if (sub->count("--out")) config.set("out", out_dir);
    if (sub->count("--seed")) config.set("seed", std::to_string(seed));
    std::vector<tokweight::SweepGrid> parsed;
    for (const auto& g : grids) parsed.push_back(tokweight::SweepGrid::parse(g));
    return tokweight::run_command(command, config, parsed, parallel, std::cout, std::cerr);
  } catch (const tokweight::ConfigError& e) {
    nlohmann::ordered_json j{{"error", "config"}, {"field", e.field()}, {"message", e.what()}};
    std::cerr << j.dump() << '\n';
    return tokweight::kExitConfig;
  }
}
