#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tokweight {

using TokenId = std::int32_t;

/// An integer token-id sequence; the unit of scoring, training and evaluation.
struct TokenSequence {
  std::uint64_t seq_id = 0;
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }

  /// Throws std::invalid_argument unless every id is in [0, vocab) and
  /// 1 <= size() <= max_length.
  void validate(int vocab, std::size_t max_length) const;
};

/// A generated document plus the metadata generators know by construction.
struct Document {
  std::vector<TokenId> ids;
  /// Expected answer tokens (passkey value), empty when not applicable.
  std::vector<TokenId> answers;
  /// Positions whose next-token prediction needs context beyond a short
  /// window: retrieved needle tokens and entity recurrences.
  std::vector<std::size_t> marked;
};

/// Splits each document into consecutive L-token chunks. A trailing chunk
/// shorter than L is dropped; chunks never straddle documents. seq_ids are
/// assigned consecutively from first_seq_id.
std::vector<TokenSequence> chunk_documents(std::span<const std::vector<TokenId>> documents,
                                           std::size_t length, std::uint64_t first_seq_id = 0);

/// One line of a corpus or task file.
struct CorpusRecord {
  std::uint64_t seq_id = 0;
  std::vector<TokenId> ids;
  /// Answer spans; corpus files carry at most one, task files may carry several.
  std::vector<std::vector<TokenId>> answers;
  std::vector<std::size_t> marked;
  std::string kind;  // task files only
};

/// Line format: tab-separated `name=value` fields. `seq_id` and `ids` are
/// required; `answers` (spans separated by ','), `marks` and `kind` are optional.
void write_corpus(std::ostream& out, std::span<const CorpusRecord> records);
std::vector<CorpusRecord> read_corpus(std::istream& in);

std::string format_ids(std::span<const TokenId> ids);
std::vector<TokenId> parse_ids(const std::string& text);

}  // namespace tokweight
