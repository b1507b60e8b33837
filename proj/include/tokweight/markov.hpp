#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tokweight/corpus.hpp"

namespace tokweight {

/// An order-m Markov chain over V symbols with exact conditional
/// probabilities. The first m tokens of a sequence are i.i.d. uniform; every
/// later token follows the transition table.
///
/// Contexts are indexed as base-V numbers of the previous m tokens, oldest
/// token most significant.
class MarkovOracle {
 public:
  /// Random smoothed chain: each row is (c + alpha) / (sum c + V alpha) with
  /// c a log-normal pseudo-count vector of total mass 10.
  static MarkovOracle random(int order, int vocab, std::uint64_t seed, double alpha = 0.1);

  /// Takes ownership of an explicit V^m x V table; rows must sum to 1 within 1e-12.
  static MarkovOracle from_table(int order, int vocab, std::vector<double> table);

  int order() const { return order_; }
  int vocab_size() const { return vocab_; }
  std::size_t context_count() const { return contexts_; }

  /// True when every transition probability is > 0.
  bool strictly_positive() const;

  std::size_t context_index(std::span<const TokenId> last_m) const;
  std::span<const double> row(std::size_t context) const;

  /// p(y_i | y_<i).
  double full_conditional(std::span<const TokenId> seq, std::size_t i) const;

  /// log p(y_0, ..., y_{end-1}); the empty prefix has log-probability 0.
  double prefix_log_probability(std::span<const TokenId> seq, std::size_t end) const;

  /// Distribution over contexts (y_{i-m}, ..., y_{i-1}) at position i >= m,
  /// obtained by propagating the initial distribution through the chain.
  std::vector<double> context_marginal(std::size_t i) const;

  /// p(y_i | y_{i-j}, ..., y_{i-1}) at position i, marginalizing the older
  /// tokens under the exact position-i context marginal.
  double marginal_conditional(std::span<const TokenId> seq, std::size_t i, std::size_t j) const;

  /// Order-j table (V^j x V) under the stationary distribution of the chain.
  std::vector<double> stationary_table(int j) const;

  std::vector<std::vector<TokenId>> sample(std::size_t count, std::size_t length,
                                           std::uint64_t seed) const;

 private:
  MarkovOracle(int order, int vocab, std::vector<double> table);

  int order_;
  int vocab_;
  std::size_t contexts_;
  std::vector<double> table_;
};

struct MarkovCorpus {
  std::vector<std::vector<TokenId>> documents;
  MarkovOracle oracle;
};

MarkovCorpus gen_markov_corpus(int order, int vocab, std::size_t count, std::size_t length,
                               std::uint64_t seed);

}  // namespace tokweight
