#include "tokweight/commands.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "tokweight/checkpoint.hpp"
#include "tokweight/rng.hpp"

namespace tokweight {

namespace {

namespace fs = std::filesystem;

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path prepare(const RunConfig& config, const std::string& command) {
  config.validate();
  const auto dir = run_directory(config, command);
  fs::create_directories(dir);
  write_text(dir / "config.txt", config.text());
  return dir;
}

std::unique_ptr<TinyLm> load_reference(const RunConfig& config, const ScorerSpec& spec) {
  if (!spec.uses_reference()) return nullptr;
  return std::make_unique<TinyLm>(load_checkpoint(config.get("scorer.reference")));
}

fs::path cache_path(const RunConfig& config, const fs::path& dir) {
  const auto& explicit_path = config.get("scorer.cache");
  return explicit_path.empty() ? dir / "score_cache.bin" : fs::path(explicit_path);
}

/// Fails with StaleCacheError when rescoring is disabled and the cache on
/// disk belongs to another scorer.
void check_cache(const RunConfig& config, const fs::path& path, const TinyLm& scorer, const ScorerSpec& spec) {
  if (config.get("scorer.rescore") == "true" || config.get("scorer.rescore") == "1") return;
  if (!fs::exists(path)) return;
  const auto fp = scorer_fingerprint(checkpoint_bytes(scorer), spec.short_context, spec.effective_overlap(),
                                     to_string(spec.function));
  load_score_cache(path, fp);
}

void train_into(const fs::path& dir, const RunConfig& config, std::ostream& warnings) {
  const auto records = load_corpus(config);
  const auto seqs = to_sequences(records);
  const auto spec = config.scorer();
  auto model = load_model(config);
  const auto reference = load_reference(config, spec);
  RunOptions options;
  options.reference = reference.get();
  if (reference) {
    options.cache = cache_path(config, dir);
    check_cache(config, *options.cache, *reference, spec);
  }
  std::ofstream log(dir / "run.jsonl", std::ios::binary | std::ios::trunc);
  options.log = &log;
  options.warnings = &warnings;
  auto result = run_training(std::move(model), seqs, spec, config.train(), options);
  save_checkpoint(result.model, dir / "model.ckpt");
}

EvalReport eval_into(const fs::path& dir, const RunConfig& config, const TinyLm& model) {
  const auto report = run_benchmark(model, VocabLayout::make(model.config().vocab), config.eval());
  std::ostringstream tsv;
  report.write_tsv(tsv);
  write_text(dir / "report.tsv", tsv.str());
  return report;
}

struct Traces {
  LogProbTrace long_trace;
  LogProbTrace short_trace;
  ScoreVector scores;
};

/// Long and short traces plus raw scores for one sequence under the spec.
Traces trace_sequence(const TinyLm& model, const TinyLm* reference, const ScorerSpec& spec,
                      const TokenSequence& seq) {
  Traces t;
  const auto fwd = model.forward(seq.ids);
  t.long_trace = LogProbTrace{seq.seq_id, static_cast<std::size_t>(model.config().max_context), fwd.target_logp};
  if (reference != nullptr) {
    t.short_trace = forward_logprobs(*reference, seq, spec.short_context, spec.effective_overlap());
  } else {
    t.short_trace = unfrozen_short_trace(model, seq, t.long_trace, spec.short_context, spec.effective_overlap());
  }
  t.scores = compute_scores(spec, t.short_trace, t.long_trace, &fwd);
  return t;
}

}  // namespace

fs::path run_directory(const RunConfig& config, const std::string& command) {
  return config.out() / (command + "-" + hex16(config.hash()));
}

std::vector<CorpusRecord> load_corpus(const RunConfig& config) {
  const auto& file = config.get("corpus.file");
  if (file.empty()) return build_corpus(config.corpus());
  std::ifstream in(file);
  if (!in) throw ConfigError("corpus.file", "cannot read " + file);
  return read_corpus(in);
}

TinyLm load_model(const RunConfig& config, const std::string& checkpoint_key) {
  const auto& path = config.get(checkpoint_key);
  TinyLm model = path.empty() ? TinyLm::init(config.model(), config.seed()) : load_checkpoint(path);
  const auto extend = static_cast<int>(std::stoul(config.get("model.extend_context")));
  if (extend > model.config().max_context) {
    model = extend_context(model, extend, std::stod(config.get("model.rope_factor")));
  }
  return model;
}

fs::path cmd_gen(const RunConfig& config) {
  const auto dir = prepare(config, "gen");
  const auto records = load_corpus(config);
  std::ostringstream out;
  write_corpus(out, records);
  write_text(dir / "corpus.tsv", out.str());
  return dir;
}

fs::path cmd_train(const RunConfig& config, std::ostream& warnings) {
  const auto dir = prepare(config, "train");
  train_into(dir, config, warnings);
  return dir;
}

fs::path cmd_score(const RunConfig& config, std::ostream& warnings) {
  const auto dir = prepare(config, "score");
  const auto seqs = to_sequences(load_corpus(config));
  const auto spec = config.scorer();
  const auto model = load_model(config);
  const auto reference = load_reference(config, spec);
  const TinyLm& scorer = reference ? *reference : model;
  const auto path = cache_path(config, dir);
  check_cache(config, path, scorer, spec);

  const auto fp = scorer_fingerprint(checkpoint_bytes(scorer), spec.short_context, spec.effective_overlap(),
                                     to_string(spec.function));
  ScoreCache cache;
  if (fs::exists(path)) {
    try {
      cache = load_score_cache(path, fp);
    } catch (const StaleCacheError& e) {
      warnings << "warning: " << e.what() << "; rescoring\n";
    }
  }
  cache.fingerprint = fp;
  cache.short_context = spec.short_context;
  cache.overlap = spec.effective_overlap();
  fs::create_directories(dir / "scores");
  for (const auto& seq : seqs) {
    const auto t = trace_sequence(model, reference.get(), spec, seq);
    cache.entries[seq.seq_id] = ScoreCacheEntry{seq.seq_id, t.short_trace.logp, t.long_trace.logp};
    std::ostringstream dump;
    write_score_dump(dump, seq, t.long_trace, t.short_trace, t.scores);
    write_text(dir / "scores" / (std::to_string(seq.seq_id) + ".tsv"), dump.str());
  }
  save_score_cache(cache, path);
  return dir;
}

fs::path cmd_eval(const RunConfig& config) {
  const auto dir = prepare(config, "eval");
  const auto key = config.get("eval.checkpoint").empty() ? "model.init" : "eval.checkpoint";
  eval_into(dir, config, load_model(config, key));
  return dir;
}

fs::path cmd_dump_weights(const RunConfig& config) {
  const auto dir = prepare(config, "dump-weights");
  const auto key = config.get("dump.checkpoint").empty() ? "model.init" : "dump.checkpoint";
  const auto model = load_model(config, key);
  const auto spec = config.scorer();
  const auto reference = load_reference(config, spec);
  const auto seqs = to_sequences(load_corpus(config));
  const auto wanted = std::stoull(config.get("dump.seq_id"));
  const auto it = std::find_if(seqs.begin(), seqs.end(), [&](const auto& s) { return s.seq_id == wanted; });
  if (it == seqs.end()) throw ConfigError("dump.seq_id", "no sequence with id " + std::to_string(wanted));
  const auto t = trace_sequence(model, reference.get(), spec, *it);
  const auto weights = postprocess(t.scores, spec.postprocess);
  std::ostringstream out;
  write_weight_dump(out, *it, t.long_trace, t.short_trace, t.scores, weights);
  write_text(dir / "weights.tsv", out.str());
  return dir;
}

SweepGrid SweepGrid::parse(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--grid", "expected NAME=v1,v2,...");
  SweepGrid grid{text.substr(0, eq), {}};
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) grid.values.push_back(item);
  }
  if (grid.values.empty()) throw ConfigError("--grid", "grid for " + grid.key + " has no values");
  return grid;
}

fs::path cmd_sweep(const RunConfig& config, const SweepGrid& grid, std::size_t parallel, std::ostream& warnings) {
  std::vector<RunConfig> points;
  for (std::size_t k = 0; k < grid.values.size(); ++k) {
    RunConfig point = config;
    point.set(grid.key, grid.values[k]);
    point.set("seed", std::to_string(derive_seed(config.seed(), k)));
    point.validate();
    points.push_back(std::move(point));
  }
  const auto dir = prepare(config, "sweep");
  std::vector<fs::path> dirs(points.size());
  std::vector<double> combined(points.size(), 0.0);
  std::vector<std::exception_ptr> errors(points.size());
  std::atomic<std::size_t> next{0};
  std::mutex warn_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < points.size(); k = next++) {
      try {
        dirs[k] = dir / ("point-" + std::to_string(k) + "-" + grid.key + "=" + grid.values[k]);
        fs::create_directories(dirs[k]);
        write_text(dirs[k] / "config.txt", points[k].text());
        std::ostringstream local;
        train_into(dirs[k], points[k], local);
        const auto model = load_checkpoint(dirs[k] / "model.ckpt");
        combined[k] = eval_into(dirs[k], points[k], model).combined;
        std::lock_guard lock(warn_mutex);
        warnings << local.str();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(parallel, points.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::ostringstream summary;
  summary << grid.key << "\tcombined\n" << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < points.size(); ++k) summary << grid.values[k] << '\t' << combined[k] << '\n';
  write_text(dir / "summary.tsv", summary.str());
  return dir;
}

int run_command(const std::string& command, const RunConfig& config, const std::vector<SweepGrid>& grids,
                std::size_t parallel, std::ostream& out, std::ostream& err) {
  auto fail = [&](int code, const std::string& kind, const std::string& message, const std::string& field = "") {
    nlohmann::ordered_json j;
    j["error"] = kind;
    if (!field.empty()) j["field"] = field;
    j["message"] = message;
    err << j.dump() << '\n';
    return code;
  };
  try {
    fs::path dir;
    if (command == "gen") {
      dir = cmd_gen(config);
    } else if (command == "train") {
      dir = cmd_train(config, err);
    } else if (command == "score") {
      dir = cmd_score(config, err);
    } else if (command == "eval") {
      dir = cmd_eval(config);
    } else if (command == "dump-weights") {
      dir = cmd_dump_weights(config);
    } else if (command == "sweep") {
      if (grids.size() != 1) throw ConfigError("--grid", "sweep needs exactly one --grid");
      dir = cmd_sweep(config, grids.front(), parallel, err);
    } else {
      throw ConfigError("command", "unknown command '" + command + "'");
    }
    out << dir.string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what(), e.field());
  } catch (const NumericAbort& e) {
    return fail(kExitNumeric, "numeric", e.what());
  } catch (const StaleCacheError& e) {
    return fail(kExitStaleCache, "stale-cache", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, "failure", e.what());
  }
}

}  // namespace tokweight
