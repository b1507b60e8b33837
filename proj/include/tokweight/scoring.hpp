#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/tinylm.hpp"

namespace tokweight {

struct ScoreProvenance {
  std::string function;  // "signed", "abs", "PPMI", ...
  std::string scorer;    // scorer identity (checkpoint id, "self", ...)
  std::size_t short_context = 0;
  std::size_t long_context = 0;
};

/// Raw per-token scores before postprocessing.
struct ScoreVector {
  std::uint64_t seq_id = 0;
  std::vector<double> scores;
  ScoreProvenance provenance;

  std::size_t size() const { return scores.size(); }
};

/// score_i = short.logp_i - long.logp_i = log(p_short(i) / p_long(i)), the
/// negated conditional PMI between token i and the far context. Requires
/// matching seq_id and length and short.context_limit <= long.context_limit.
ScoreVector signed_score(const LogProbTrace& short_trace, const LogProbTrace& long_trace);

/// Entrywise |score|.
ScoreVector abs_score(const ScoreVector& signed_scores);

enum class PmiVariant { kPpmi, kNpmi, kShiftedPpmi, kShiftedNpmi };

/// Parses "PPMI", "NPMI", "sPPMI", "sNPMI"; throws std::invalid_argument otherwise.
PmiVariant parse_pmi_variant(const std::string& name);
std::string to_string(PmiVariant variant);

/// With PMI = -signed: PPMI = max(PMI, 0), NPMI = max(-PMI, 0),
/// sPPMI = max(PMI - ln k, 0), sNPMI = max(-PMI - ln k, 0).
/// Shifted variants require k >= 2.
ScoreVector pmi_variant(const ScoreVector& signed_scores, PmiVariant variant, int shift = 2);

/// score_i = max(1 - H(p_i), 0), entropy in nats. `distributions` holds one
/// probability row of width `vocab` per position; rows must sum to 1 within 1e-4.
ScoreVector entropy_weight(std::span<const double> distributions, std::size_t vocab,
                           std::uint64_t seq_id = 0);

/// Same, from a forward pass's log-probability rows.
ScoreVector entropy_weight(const ForwardResult<float>& forward, std::uint64_t seq_id = 0);

/// TSV with header `pos token_id loss_long loss_short score`.
void write_score_dump(std::ostream& out, const TokenSequence& sequence,
                      const LogProbTrace& long_trace, const LogProbTrace& short_trace,
                      const ScoreVector& scores);

}  // namespace tokweight
