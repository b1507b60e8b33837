#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/scoring.hpp"
#include "tokweight/tinylm.hpp"

namespace tokweight {

struct PostprocessTag {
  enum class Kind { kUniform, kSparse, kDense };
  Kind kind = Kind::kUniform;
  double kappa = 1.0;       // sparse
  std::uint64_t seed = 0;   // sparse
  double lambda = 1.0;      // dense

  static PostprocessTag uniform() { return {}; }
  static PostprocessTag sparse(double kappa, std::uint64_t seed) {
    return {Kind::kSparse, kappa, seed, 1.0};
  }
  static PostprocessTag dense(double lambda) { return {Kind::kDense, 1.0, 0, lambda}; }
};

/// Nonnegative per-token loss weights summing to the sequence length.
struct WeightVector {
  std::uint64_t seq_id = 0;
  std::vector<double> weights;
  PostprocessTag tag;

  std::size_t size() const { return weights.size(); }
};

WeightVector uniform_weights(std::uint64_t seq_id, std::size_t length);

/// Number of tokens kept by sparse postprocessing: max(1, round(kappa * N)).
std::size_t sparse_count(double kappa, std::size_t length);

/// Keeps the m = sparse_count(kappa, N) highest-scoring positions at weight
/// N / m and zeroes the rest. Positions strictly above the m-th largest score
/// are always kept; the remaining slots are filled uniformly at random among
/// the positions tied at that score (which covers the all-zero case), using
/// a stream derived from (seed, seq_id).
WeightVector sparsify_quantile(const ScoreVector& scores, double kappa, std::uint64_t seed);

/// w_i = N * s_i / sum_j s_j; falls back to all-ones when the sum is below 1e-12 * N.
WeightVector normalize_to_length(const ScoreVector& scores);

/// w_i = lambda + (1 - lambda) * dense_i; the sum stays N.
WeightVector interpolate_uniform(const WeightVector& dense, double lambda);

/// TSV with header `pos token_id loss_long loss_short score weight`.
void write_weight_dump(std::ostream& out, const TokenSequence& sequence,
                       const LogProbTrace& long_trace, const LogProbTrace& short_trace,
                       const ScoreVector& scores, const WeightVector& weights);

}  // namespace tokweight
