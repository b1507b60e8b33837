#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tokweight/config.hpp"

namespace tokweight {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitStaleCache = 4,
};

/// Content-addressed output directory: <out>/<command>-<16 hex digits of the config hash>.
std::filesystem::path run_directory(const RunConfig& config, const std::string& command);

std::vector<CorpusRecord> load_corpus(const RunConfig& config);
TinyLm load_model(const RunConfig& config, const std::string& checkpoint_key = "model.init");

// Each command writes into its run directory (returned) and copies the
// resolved configuration there as config.txt.
std::filesystem::path cmd_gen(const RunConfig& config);
std::filesystem::path cmd_train(const RunConfig& config, std::ostream& warnings);
std::filesystem::path cmd_score(const RunConfig& config, std::ostream& warnings);
std::filesystem::path cmd_eval(const RunConfig& config);
std::filesystem::path cmd_dump_weights(const RunConfig& config);

struct SweepGrid {
  std::string key;
  std::vector<std::string> values;

  /// Parses `NAME=v1,v2,...`.
  static SweepGrid parse(const std::string& text);
};

/// Trains and evaluates one run per grid value, `parallel` at a time. Every
/// point gets its own directory and a seed derived from (seed, index).
std::filesystem::path cmd_sweep(const RunConfig& config, const SweepGrid& grid, std::size_t parallel,
                                std::ostream& warnings);

/// Dispatches `command`, mapping failures to exit codes and printing a
/// one-line JSON error to `err`.
int run_command(const std::string& command, const RunConfig& config, const std::vector<SweepGrid>& grids,
                std::size_t parallel, std::ostream& out, std::ostream& err);

}  // namespace tokweight
