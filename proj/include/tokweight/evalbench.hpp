#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/generators.hpp"
#include "tokweight/markov.hpp"
#include "tokweight/tinylm.hpp"

namespace tokweight {

enum class TaskKind {
  kNiahSingle,
  kNiahMultikey,
  kNiahMultivalue,
  kNiahMultiquery,
  kVariableTracking,
  kCommonWords,
  kFrequentWords,
};

inline constexpr TaskKind kAllTaskKinds[] = {
    TaskKind::kNiahSingle,       TaskKind::kNiahMultikey, TaskKind::kNiahMultivalue,
    TaskKind::kNiahMultiquery,   TaskKind::kVariableTracking, TaskKind::kCommonWords,
    TaskKind::kFrequentWords,
};

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct TaskParams {
  std::size_t key_tokens = 2;
  std::size_t value_tokens = 3;
  std::size_t pairs = 4;            // m for the multi-needle kinds
  std::size_t chain = 5;            // k for variable tracking
  std::size_t chain_value_tokens = 2;
  std::size_t common_targets = 10;
  std::size_t common_target_count = 30;
  std::size_t common_distractor_count = 3;
  std::size_t common_distractors = 0;  // 0 = every remaining word
  std::size_t frequent_top = 3;
  double zeta_exponent = 2.0;

  /// Word-list sizes shrunk to fit a desk-scale length bucket.
  static TaskParams desk(std::size_t length);
};

/// One evaluation prompt. Decoding proceeds in segments: the model continues
/// `prompt` for `answer_budget` tokens, then each followup is appended and the
/// model continues for another `answer_budget` tokens. prompt, followups and
/// all decoded tokens together fit in `length`.
struct EvalTask {
  TaskKind kind = TaskKind::kNiahSingle;
  std::size_t length = 0;
  TokenSequence prompt;
  std::vector<std::vector<TokenId>> followups;
  std::vector<std::vector<TokenId>> answers;
  std::size_t answer_budget = 0;

  std::size_t total_budget() const;
};

/// Throws std::invalid_argument when the task cannot fit in `length` tokens.
EvalTask gen_eval_task(TaskKind kind, std::size_t length, std::uint64_t seed, const VocabLayout& vocab,
                       const TaskParams& params = {});

/// Greedy continuation of `prompt` by `max_new` tokens. With context_limit
/// below the model context (or 0 for the full context) the model only sees
/// the most recent context_limit tokens.
std::vector<TokenId> greedy_decode(const TinyLm& model, std::span<const TokenId> prompt,
                                   std::size_t max_new, std::size_t context_limit = 0);

/// Runs the task's segments and returns every decoded token in order.
std::vector<TokenId> run_task(const TinyLm& model, const EvalTask& task, std::size_t context_limit = 0);

/// Fraction of expected spans occurring contiguously somewhere in `output`.
double score_recall(std::span<const TokenId> output, std::span<const std::vector<TokenId>> expected);

struct EvalReport {
  std::vector<std::string> tasks;
  std::vector<std::size_t> lengths;
  std::map<std::pair<std::string, std::size_t>, double> recall;
  std::map<std::size_t, double> per_length;
  double combined = 0.0;

  /// Rows = tasks, columns = lengths, plus a mean column and a mean row.
  void write_tsv(std::ostream& out) const;
};

/// Mean over tasks per length, then mean over lengths. Throws
/// std::invalid_argument naming any (task, length) cell that is missing.
EvalReport aggregate(const std::map<std::pair<std::string, std::size_t>, double>& cells,
                     std::span<const std::string> tasks, std::span<const std::size_t> lengths);

struct BenchmarkConfig {
  std::vector<std::size_t> lengths{64, 128, 192, 256};
  std::vector<TaskKind> tasks{std::begin(kAllTaskKinds), std::end(kAllTaskKinds)};
  std::size_t samples = 10;
  std::uint64_t seed = 0;
  std::size_t context_limit = 0;
};

/// Mini-RULER: every task kind at every length bucket, `samples` prompts per
/// cell, recall averaged per cell, then aggregated.
EvalReport run_benchmark(const TinyLm& model, const VocabLayout& vocab, const BenchmarkConfig& config);

struct PositionBucket {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t count = 0;
  double perplexity = 0.0;
};

/// exp(mean NLL) of all tokens whose position falls in each width-wide bucket.
/// context_limit = 0 uses the whole prefix; smaller limits unfold windows.
std::vector<PositionBucket> perplexity_by_position(const TinyLm& model,
                                                   std::span<const TokenSequence> sequences,
                                                   std::size_t width, std::size_t context_limit = 0);

class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct CpmiCheck {
  double lhs = 0.0;  // from brute-force joint probabilities
  double rhs = 0.0;  // from marginalized conditionals
};

/// With recent context r = y[i-j, i) and older context a = y[0, i-j):
/// lhs = -log(p(y_i, a, r) p(r) / (p(y_i, r) p(a, r))) by enumerating all
/// V^(i-j) older contexts, rhs = log(p_j(y_i) / p_full(y_i)).
/// Requires j <= order <= i and a strictly positive chain.
CpmiCheck cpmi_oracle_check(const MarkovOracle& oracle, std::span<const TokenId> sequence, std::size_t i,
                            std::size_t j, std::size_t state_budget = 2'000'000);

struct KlCheck {
  double expected_log_p = 0.0;
  double expected_log_q = 0.0;
  double kl_p = 0.0;
  double kl_q = 0.0;
  bool holds = false;
};

/// Requires normalized pi, p, q and p >= q on the support of pi.
KlCheck kl_ordering_check(std::span<const double> pi, std::span<const double> p, std::span<const double> q,
                          double tolerance = 1e-12);

}  // namespace tokweight
