#include "tokweight/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace tokweight {

ScoreVector signed_score(const LogProbTrace& short_trace, const LogProbTrace& long_trace) {
  if (short_trace.seq_id != long_trace.seq_id) {
    throw std::invalid_argument("trace mismatch: seq_id " + std::to_string(short_trace.seq_id) +
                                " vs " + std::to_string(long_trace.seq_id));
  }
  if (short_trace.size() != long_trace.size()) {
    throw std::invalid_argument("trace mismatch: lengths " + std::to_string(short_trace.size()) +
                                " vs " + std::to_string(long_trace.size()));
  }
  if (short_trace.context_limit > long_trace.context_limit) {
    throw std::invalid_argument("short trace has a larger context limit than the long trace");
  }
  ScoreVector out;
  out.seq_id = long_trace.seq_id;
  out.provenance = {"signed", "", short_trace.context_limit, long_trace.context_limit};
  out.scores.resize(long_trace.size());
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    out.scores[i] = short_trace.logp[i] - long_trace.logp[i];
    if (!std::isfinite(out.scores[i])) {
      throw std::invalid_argument("non-finite score at position " + std::to_string(i));
    }
  }
  return out;
}

ScoreVector abs_score(const ScoreVector& signed_scores) {
  ScoreVector out = signed_scores;
  out.provenance.function = "abs";
  for (auto& s : out.scores) s = std::abs(s);
  return out;
}

PmiVariant parse_pmi_variant(const std::string& name) {
  if (name == "PPMI") return PmiVariant::kPpmi;
  if (name == "NPMI") return PmiVariant::kNpmi;
  if (name == "sPPMI") return PmiVariant::kShiftedPpmi;
  if (name == "sNPMI") return PmiVariant::kShiftedNpmi;
  throw std::invalid_argument("unknown PMI variant '" + name + "'");
}

std::string to_string(PmiVariant variant) {
  switch (variant) {
    case PmiVariant::kPpmi: return "PPMI";
    case PmiVariant::kNpmi: return "NPMI";
    case PmiVariant::kShiftedPpmi: return "sPPMI";
    case PmiVariant::kShiftedNpmi: return "sNPMI";
  }
  throw std::invalid_argument("unknown PMI variant");
}

ScoreVector pmi_variant(const ScoreVector& signed_scores, PmiVariant variant, int shift) {
  const bool shifted = variant == PmiVariant::kShiftedPpmi || variant == PmiVariant::kShiftedNpmi;
  if (shifted && shift < 2) throw std::invalid_argument("PMI shift k must be >= 2");
  const double log_k = shifted ? std::log(static_cast<double>(shift)) : 0.0;
  ScoreVector out = signed_scores;
  out.provenance.function = to_string(variant);
  for (auto& s : out.scores) {
    const double pmi = -s;
    switch (variant) {
      case PmiVariant::kPpmi: s = std::max(pmi, 0.0); break;
      case PmiVariant::kNpmi: s = std::max(-pmi, 0.0); break;
      case PmiVariant::kShiftedPpmi: s = std::max(pmi - log_k, 0.0); break;
      case PmiVariant::kShiftedNpmi: s = std::max(-pmi - log_k, 0.0); break;
    }
  }
  return out;
}

ScoreVector entropy_weight(std::span<const double> distributions, std::size_t vocab,
                           std::uint64_t seq_id) {
  if (vocab == 0 || distributions.size() % vocab != 0) {
    throw std::invalid_argument("distribution buffer is not a whole number of rows");
  }
  ScoreVector out;
  out.seq_id = seq_id;
  out.provenance.function = "entropy";
  const std::size_t n = distributions.size() / vocab;
  out.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = distributions.subspan(i * vocab, vocab);
    double sum = 0.0, entropy = 0.0;
    for (double p : row) {
      if (p < 0.0) throw std::invalid_argument("negative probability at position " + std::to_string(i));
      sum += p;
      if (p > 0.0) entropy -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > 1e-4) {
      throw std::invalid_argument("distribution at position " + std::to_string(i) + " sums to " +
                                  std::to_string(sum));
    }
    out.scores[i] = std::max(1.0 - entropy, 0.0);
  }
  return out;
}

ScoreVector entropy_weight(const ForwardResult<float>& forward, std::uint64_t seq_id) {
  std::vector<double> probs(forward.log_probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(static_cast<double>(forward.log_probs[i]));
  return entropy_weight(probs, forward.vocab, seq_id);
}

void write_score_dump(std::ostream& out, const TokenSequence& sequence,
                      const LogProbTrace& long_trace, const LogProbTrace& short_trace,
                      const ScoreVector& scores) {
  if (long_trace.size() != sequence.size() || short_trace.size() != sequence.size() ||
      scores.size() != sequence.size()) {
    throw std::invalid_argument("score dump inputs differ in length");
  }
  out << "pos\ttoken_id\tloss_long\tloss_short\tscore\n";
  out << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    // + 0.0 prints a zero loss as 0.000000 rather than -0.000000
    out << i << '\t' << sequence.ids[i] << '\t' << -long_trace.logp[i] + 0.0 << '\t'
        << -short_trace.logp[i] + 0.0 << '\t' << scores.scores[i] << '\n';
  }
}

}  // namespace tokweight
