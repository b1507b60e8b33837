#include "tokweight/markov.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tokweight/rng.hpp"

namespace tokweight {

namespace {

std::size_t int_pow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int k = 0; k < exp; ++k) r *= base;
  return r;
}

void check_shape(int order, int vocab) {
  if (order < 1) throw std::invalid_argument("Markov order must be >= 1");
  if (vocab < 2) throw std::invalid_argument("Markov vocabulary must be >= 2");
  if (std::pow(static_cast<double>(vocab), order) > 1e8) {
    throw std::invalid_argument("Markov table V^m exceeds 1e8 contexts");
  }
}

}  // namespace

MarkovOracle::MarkovOracle(int order, int vocab, std::vector<double> table)
    : order_(order),
      vocab_(vocab),
      contexts_(int_pow(static_cast<std::size_t>(vocab), order)),
      table_(std::move(table)) {}

MarkovOracle MarkovOracle::random(int order, int vocab, std::uint64_t seed, double alpha) {
  check_shape(order, vocab);
  if (!(alpha > 0.0)) throw std::invalid_argument("smoothing alpha must be positive");
  const std::size_t contexts = int_pow(static_cast<std::size_t>(vocab), order);
  std::vector<double> table(contexts * static_cast<std::size_t>(vocab));
  Rng rng(seed);
  std::vector<double> raw(static_cast<std::size_t>(vocab));
  constexpr double kMass = 10.0;
  for (std::size_t c = 0; c < contexts; ++c) {
    double total = 0.0;
    for (auto& r : raw) {
      r = std::exp(2.0 * rng.normal());
      total += r;
    }
    const double denom = kMass + alpha * vocab;
    for (int v = 0; v < vocab; ++v) {
      table[c * vocab + v] = (kMass * raw[v] / total + alpha) / denom;
    }
  }
  return MarkovOracle(order, vocab, std::move(table));
}

MarkovOracle MarkovOracle::from_table(int order, int vocab, std::vector<double> table) {
  check_shape(order, vocab);
  const std::size_t contexts = int_pow(static_cast<std::size_t>(vocab), order);
  if (table.size() != contexts * static_cast<std::size_t>(vocab)) {
    throw std::invalid_argument("Markov table must have V^m * V entries");
  }
  for (std::size_t c = 0; c < contexts; ++c) {
    double s = 0.0;
    for (int v = 0; v < vocab; ++v) {
      const double p = table[c * vocab + v];
      if (!(p >= 0.0)) throw std::invalid_argument("Markov table has a negative entry");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) {
      throw std::invalid_argument("Markov table row " + std::to_string(c) + " sums to " +
                                  std::to_string(s));
    }
  }
  return MarkovOracle(order, vocab, std::move(table));
}

bool MarkovOracle::strictly_positive() const {
  for (double p : table_) {
    if (!(p > 0.0)) return false;
  }
  return true;
}

std::size_t MarkovOracle::context_index(std::span<const TokenId> last_m) const {
  if (last_m.size() != static_cast<std::size_t>(order_)) {
    throw std::invalid_argument("context must hold exactly `order` tokens");
  }
  std::size_t idx = 0;
  for (TokenId t : last_m) {
    if (t < 0 || t >= vocab_) throw std::invalid_argument("token outside oracle vocabulary");
    idx = idx * vocab_ + static_cast<std::size_t>(t);
  }
  return idx;
}

std::span<const double> MarkovOracle::row(std::size_t context) const {
  return std::span<const double>(table_).subspan(context * vocab_, vocab_);
}

double MarkovOracle::full_conditional(std::span<const TokenId> seq, std::size_t i) const {
  if (i < static_cast<std::size_t>(order_)) return 1.0 / vocab_;
  const auto ctx = context_index(seq.subspan(i - order_, order_));
  return row(ctx)[seq[i]];
}

double MarkovOracle::prefix_log_probability(std::span<const TokenId> seq, std::size_t end) const {
  double lp = 0.0;
  for (std::size_t i = 0; i < end; ++i) lp += std::log(full_conditional(seq, i));
  return lp;
}

std::vector<double> MarkovOracle::context_marginal(std::size_t i) const {
  if (i < static_cast<std::size_t>(order_)) {
    throw std::invalid_argument("context marginal is defined for positions >= order");
  }
  std::vector<double> cur(contexts_, 1.0 / static_cast<double>(contexts_));
  std::vector<double> next(contexts_);
  const std::size_t keep = contexts_ / vocab_;
  for (std::size_t t = order_; t < i; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t c = 0; c < contexts_; ++c) {
      const double pc = cur[c];
      const std::size_t base = (c % keep) * vocab_;
      const auto r = row(c);
      for (int y = 0; y < vocab_; ++y) next[base + y] += pc * r[y];
    }
    cur.swap(next);
  }
  return cur;
}

double MarkovOracle::marginal_conditional(std::span<const TokenId> seq, std::size_t i,
                                          std::size_t j) const {
  if (i >= seq.size()) throw std::invalid_argument("position outside sequence");
  if (j > i) throw std::invalid_argument("recent context longer than the prefix");
  const auto m = static_cast<std::size_t>(order_);
  if (i < m) return 1.0 / vocab_;
  if (j >= m) return full_conditional(seq, i);
  const auto marginal = context_marginal(i);
  const std::size_t modulus = int_pow(static_cast<std::size_t>(vocab_), static_cast<int>(j));
  std::size_t recent = 0;
  for (std::size_t t = i - j; t < i; ++t) recent = recent * vocab_ + static_cast<std::size_t>(seq[t]);
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < contexts_; ++c) {
    if (c % modulus != recent) continue;
    num += marginal[c] * row(c)[seq[i]];
    den += marginal[c];
  }
  return num / den;
}

std::vector<double> MarkovOracle::stationary_table(int j) const {
  if (j < 0 || j > order_) throw std::invalid_argument("stationary table order must be in [0, m]");
  std::vector<double> pi(contexts_, 1.0 / static_cast<double>(contexts_));
  std::vector<double> next(contexts_);
  const std::size_t keep = contexts_ / vocab_;
  for (int iter = 0; iter < 100000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t c = 0; c < contexts_; ++c) {
      const std::size_t base = (c % keep) * vocab_;
      const auto r = row(c);
      for (int y = 0; y < vocab_; ++y) next[base + y] += pi[c] * r[y];
    }
    double delta = 0.0;
    for (std::size_t c = 0; c < contexts_; ++c) delta += std::abs(next[c] - pi[c]);
    pi.swap(next);
    if (delta < 1e-15) break;
  }
  const std::size_t modulus = int_pow(static_cast<std::size_t>(vocab_), j);
  std::vector<double> out(modulus * vocab_, 0.0);
  std::vector<double> mass(modulus, 0.0);
  for (std::size_t c = 0; c < contexts_; ++c) {
    const std::size_t r = c % modulus;
    mass[r] += pi[c];
    for (int y = 0; y < vocab_; ++y) out[r * vocab_ + y] += pi[c] * row(c)[y];
  }
  for (std::size_t r = 0; r < modulus; ++r) {
    for (int y = 0; y < vocab_; ++y) out[r * vocab_ + y] /= mass[r];
  }
  return out;
}

std::vector<std::vector<TokenId>> MarkovOracle::sample(std::size_t count, std::size_t length,
                                                       std::uint64_t seed) const {
  std::vector<std::vector<TokenId>> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, k));
    auto& seq = out[k];
    seq.resize(length);
    for (std::size_t i = 0; i < length; ++i) {
      if (i < static_cast<std::size_t>(order_)) {
        seq[i] = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab_)));
      } else {
        const auto ctx = context_index(std::span<const TokenId>(seq).subspan(i - order_, order_));
        seq[i] = static_cast<TokenId>(rng.categorical(row(ctx)));
      }
    }
  }
  return out;
}

MarkovCorpus gen_markov_corpus(int order, int vocab, std::size_t count, std::size_t length,
                               std::uint64_t seed) {
  auto oracle = MarkovOracle::random(order, vocab, derive_seed(seed, 0));
  auto docs = oracle.sample(count, length, derive_seed(seed, 1));
  return MarkovCorpus{std::move(docs), std::move(oracle)};
}

}  // namespace tokweight
