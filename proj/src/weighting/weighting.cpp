#include "tokweight/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "tokweight/rng.hpp"

namespace tokweight {

WeightVector uniform_weights(std::uint64_t seq_id, std::size_t length) {
  return WeightVector{seq_id, std::vector<double>(length, 1.0), PostprocessTag::uniform()};
}

std::size_t sparse_count(double kappa, std::size_t length) {
  const auto m = static_cast<std::size_t>(std::llround(kappa * static_cast<double>(length)));
  return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(length, 1));
}

WeightVector sparsify_quantile(const ScoreVector& scores, double kappa, std::uint64_t seed) {
  if (!(kappa > 0.0 && kappa <= 1.0)) {
    throw std::invalid_argument("sparsity kappa must be in (0, 1], got " + std::to_string(kappa));
  }
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("cannot sparsify an empty score vector");
  for (double s : scores.scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("scores must be finite");
  }
  const std::size_t m = sparse_count(kappa, n);

  std::vector<double> sorted = scores.scores;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(m - 1), sorted.end(),
                   std::greater<>());
  const double threshold = sorted[m - 1];

  WeightVector out{scores.seq_id, std::vector<double>(n, 0.0), PostprocessTag::sparse(kappa, seed)};
  const double w = static_cast<double>(n) / static_cast<double>(m);
  std::size_t taken = 0;
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < n; ++i) {
    if (scores.scores[i] > threshold) {
      out.weights[i] = w;
      ++taken;
    } else if (scores.scores[i] == threshold) {
      tied.push_back(i);
    }
  }
  // Partial Fisher-Yates over the tied positions.
  Rng rng(derive_seed(seed, scores.seq_id));
  const std::size_t need = m - taken;
  for (std::size_t k = 0; k < need; ++k) {
    const std::size_t j = k + rng.below(tied.size() - k);
    std::swap(tied[k], tied[j]);
    out.weights[tied[k]] = w;
  }
  return out;
}

WeightVector normalize_to_length(const ScoreVector& scores) {
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("cannot normalize an empty score vector");
  double sum = 0.0;
  for (double s : scores.scores) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("dense normalization needs finite nonnegative scores");
    }
    sum += s;
  }
  WeightVector out{scores.seq_id, std::vector<double>(n, 1.0), PostprocessTag::dense(0.0)};
  if (sum < 1e-12 * static_cast<double>(n)) return out;
  const double scale = static_cast<double>(n) / sum;
  for (std::size_t i = 0; i < n; ++i) out.weights[i] = scores.scores[i] * scale;
  return out;
}

WeightVector interpolate_uniform(const WeightVector& dense, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("interpolation lambda must be in [0, 1], got " + std::to_string(lambda));
  }
  const double n = static_cast<double>(dense.size());
  const double sum = std::accumulate(dense.weights.begin(), dense.weights.end(), 0.0);
  if (std::abs(sum - n) > 1e-9 * n) {
    throw std::invalid_argument("interpolation input must sum to N (" + std::to_string(n) +
                                "), got " + std::to_string(sum));
  }
  WeightVector out{dense.seq_id, dense.weights, PostprocessTag::dense(lambda)};
  for (auto& w : out.weights) w = lambda + (1.0 - lambda) * w;
  return out;
}

void write_weight_dump(std::ostream& out, const TokenSequence& sequence,
                       const LogProbTrace& long_trace, const LogProbTrace& short_trace,
                       const ScoreVector& scores, const WeightVector& weights) {
  const std::size_t n = sequence.size();
  if (long_trace.size() != n || short_trace.size() != n || scores.size() != n || weights.size() != n) {
    throw std::invalid_argument("weight dump inputs differ in length");
  }
  out << "pos\ttoken_id\tloss_long\tloss_short\tscore\tweight\n";
  out << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < n; ++i) {
    out << i << '\t' << sequence.ids[i] << '\t' << -long_trace.logp[i] + 0.0 << '\t'
        << -short_trace.logp[i] + 0.0 << '\t' << scores.scores[i] << '\t' << weights.weights[i]
        << '\n';
  }
}

}  // namespace tokweight
