#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tokweight/corpus.hpp"

namespace tokweight {

/// Half-open id range [begin, end).
struct TokenRange {
  TokenId begin = 0;
  TokenId end = 0;

  TokenId size() const { return end - begin; }
  bool contains(TokenId t) const { return t >= begin && t < end; }
  TokenId at(std::size_t k) const { return begin + static_cast<TokenId>(k); }
};

/// Partition of the vocabulary into disjoint token classes shared by the
/// training generators and the evaluation tasks.
struct VocabLayout {
  static constexpr TokenId kKeyMarker = 0;
  static constexpr TokenId kValueMarker = 1;
  static constexpr TokenId kQueryMarker = 2;
  static constexpr TokenId kEntityMarker = 3;
  static constexpr TokenId kAssignMarker = 4;
  static constexpr TokenId kEquals = 5;
  static constexpr TokenId kListMarker = 6;
  static constexpr TokenId kPeriod = 7;
  static constexpr TokenId kSpecialCount = 8;

  int vocab_size = 0;
  TokenRange digits;    // numeric values
  TokenRange words;     // keys, variable names, word lists
  TokenRange entities;  // named-entity spans
  TokenRange filler;    // haystack text

  /// Throws std::invalid_argument when the vocabulary cannot host every class
  /// (needs at least 32 ids).
  static VocabLayout make(int vocab_size);
};

struct PasskeyConfig {
  std::size_t length = 256;   // document length including needle and query
  std::size_t distance = 64;  // filler tokens between needle end and query start
  std::size_t key_tokens = 2;
  std::size_t value_tokens = 3;
  std::size_t count = 100;
  std::uint64_t seed = 0;
};

/// Passkey retrieval documents:
///   filler.. [KEY k.. VAL v..] filler(distance) [QUERY k.. VAL] v..
/// Filler cycles through five short sentences fixed by the seed. `answers`
/// holds the value tokens; `marked` holds the restated key and answer positions.
std::vector<Document> gen_passkey_corpus(const PasskeyConfig& config, const VocabLayout& vocab);

/// Returns the five filler sentences used by every passkey-style haystack
/// generated under `seed`.
std::vector<std::vector<TokenId>> filler_sentences(const VocabLayout& vocab, std::uint64_t seed);

struct EntityConfig {
  std::size_t length = 256;
  int filler_order = 1;
  std::size_t entity_pool = 64;  // 0 = pure Markov filler
  std::size_t span_tokens = 2;
  std::size_t gap = 96;          // filler tokens between consecutive mentions (before jitter)
  std::size_t jitter = 8;        // mention gaps vary uniformly in [gap - jitter, gap + jitter]
  std::size_t count = 100;
  std::uint64_t seed = 0;
};

/// Markov filler text in which one entity span from a fixed pool is
/// mentioned repeatedly as [ENTITY e..]. `marked` holds the span tokens of
/// every mention after the first.
std::vector<Document> gen_entity_recurrence_corpus(const EntityConfig& config,
                                                   const VocabLayout& vocab);

}  // namespace tokweight
