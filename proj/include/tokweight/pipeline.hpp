#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/scoring.hpp"
#include "tokweight/tinylm.hpp"
#include "tokweight/train.hpp"
#include "tokweight/weighting.hpp"

namespace tokweight {

enum class ScorerMode { kFrozen, kUnfrozen, kWeakToStrong };
enum class ScoreFunction { kSigned, kAbs, kPpmi, kNpmi, kShiftedPpmi, kShiftedNpmi, kEntropy };

ScorerMode parse_scorer_mode(const std::string& name);  // frozen | unfrozen | weak-to-strong
std::string to_string(ScorerMode mode);
ScoreFunction parse_score_function(const std::string& name);  // signed | abs | PPMI | NPMI | sPPMI | sNPMI | entropy
std::string to_string(ScoreFunction function);

struct ScorerSpec {
  ScorerMode mode = ScorerMode::kUnfrozen;
  std::string reference;  // checkpoint id/path for frozen and weak-to-strong
  ScoreFunction function = ScoreFunction::kAbs;
  int shift = 2;  // k for the shifted PMI variants
  PostprocessTag postprocess;
  std::size_t short_context = 16;
  std::size_t overlap = 0;  // 0 = default_overlap(short_context)

  std::size_t effective_overlap() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate(std::size_t long_context) const;
  bool uses_reference() const { return mode != ScorerMode::kUnfrozen; }
};

class StaleCacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a over the checkpoint bytes, n, o and the function id.
std::uint64_t scorer_fingerprint(std::span<const std::uint8_t> checkpoint, std::size_t short_context,
                                 std::size_t overlap, const std::string& function_id);

struct ScoreCacheEntry {
  std::uint64_t seq_id = 0;
  std::vector<double> short_logp;
  std::vector<double> long_logp;
};

struct ScoreCache {
  std::uint64_t fingerprint = 0;
  std::size_t short_context = 0;
  std::size_t overlap = 0;
  std::map<std::uint64_t, ScoreCacheEntry> entries;

  const ScoreCacheEntry& at(std::uint64_t seq_id) const;
};

/// Binary layout: "SWC1", fingerprint u64, n u32, o u32, count u32, then per
/// sequence seq_id u64, length u32, short and long logp as f64; little-endian.
std::vector<std::uint8_t> score_cache_bytes(const ScoreCache& cache);
ScoreCache parse_score_cache(std::span<const std::uint8_t> bytes);
void save_score_cache(const ScoreCache& cache, const std::filesystem::path& path);
/// Throws StaleCacheError if the stored fingerprint differs from `expected`.
ScoreCache load_score_cache(const std::filesystem::path& path, std::uint64_t expected);

/// Short-context traces of the reference model for every sequence, together
/// with the long-context traces of `long_model` at scoring time.
ScoreCache score_frozen(const TinyLm& reference, const TinyLm& long_model,
                        std::span<const TokenSequence> sequences, std::size_t short_context,
                        std::size_t overlap, const std::string& function_id);

/// Short trace of the model scoring itself: positions below `short_context`
/// copy `long_trace`, later positions come from windowed passes.
LogProbTrace unfrozen_short_trace(const TinyLm& model, const TokenSequence& sequence,
                                  const LogProbTrace& long_trace, std::size_t short_context,
                                  std::size_t overlap);

/// Applies the spec's scoring function. `forward` supplies predictive
/// distributions for the entropy function and may be null otherwise.
ScoreVector compute_scores(const ScorerSpec& spec, const LogProbTrace& short_trace,
                           const LogProbTrace& long_trace, const ForwardResult<float>* forward);

ScoreVector score_unfrozen(const TinyLm& model, const TokenSequence& sequence, const ScorerSpec& spec);

WeightVector postprocess(const ScoreVector& scores, const PostprocessTag& tag);

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double w_mean = 0.0;
  double w_max = 0.0;
  double nnz_frac = 0.0;
};

std::string to_json_line(const StepLog& log);

/// What one training step saw, for observers.
struct StepView {
  std::size_t step = 0;
  std::span<const TokenSequence> batch;
  std::span<const ScoreVector> scores;  // empty for uniform postprocessing
  std::span<const WeightVector> weights;
};

struct RunOptions {
  const TinyLm* reference = nullptr;            // frozen / weak-to-strong scorer
  std::optional<std::filesystem::path> cache;   // frozen score cache location
  bool recompute_reference = false;             // bypass the cache and rescore every step
  std::ostream* log = nullptr;                  // JSON-lines step log
  std::ostream* warnings = nullptr;
  std::function<void(const StepView&)> observer;
};

struct RunResult {
  TinyLm model;
  std::vector<StepLog> log;
  bool cache_hit = false;
};

/// Indices of the sequences used at 1-based `step`: epochs are seeded
/// permutations of the corpus, consumed batch_size * grad_accum at a time.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t corpus_size, const TrainConfig& config);
  std::vector<std::size_t> next();

 private:
  std::size_t corpus_size_;
  std::size_t per_step_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

/// Weighted continual training for config.total_steps steps.
RunResult run_training(TinyLm model, std::span<const TokenSequence> corpus, const ScorerSpec& spec,
                       const TrainConfig& config, const RunOptions& options = {});

/// The same loop with unit weights and no scorer at all.
RunResult run_unweighted(TinyLm model, std::span<const TokenSequence> corpus, const TrainConfig& config,
                         std::ostream* log = nullptr);

}  // namespace tokweight
