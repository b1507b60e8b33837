#include "tokweight/generators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tokweight/rng.hpp"

namespace tokweight {

namespace {

constexpr std::uint64_t kFillerStream = 0xf111e5ULL;
constexpr std::uint64_t kPoolStream = 0xe7717e5ULL;
constexpr std::uint64_t kChainStream = 0xc4a17ULL;

void check_layout(const VocabLayout& v) {
  const TokenRange ranges[] = {v.digits, v.words, v.entities, v.filler};
  TokenId prev_end = VocabLayout::kSpecialCount;
  for (const auto& r : ranges) {
    if (r.size() < 3 || r.begin < prev_end || r.end > v.vocab_size) {
      throw std::invalid_argument("vocabulary layout has an empty or overlapping token class");
    }
    prev_end = r.end;
  }
}

TokenId draw(Rng& rng, const TokenRange& range) {
  return range.at(rng.below(static_cast<std::uint64_t>(range.size())));
}

/// Cycles endlessly through a fixed list of sentences.
class SentenceCycle {
 public:
  SentenceCycle(const std::vector<std::vector<TokenId>>& sentences, Rng& rng)
      : stream_() {
    for (const auto& s : sentences) stream_.insert(stream_.end(), s.begin(), s.end());
    pos_ = rng.below(stream_.size());
  }

  void emit(std::vector<TokenId>& out, std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
      out.push_back(stream_[pos_]);
      pos_ = (pos_ + 1) % stream_.size();
    }
  }

 private:
  std::vector<TokenId> stream_;
  std::size_t pos_ = 0;
};

}  // namespace

VocabLayout VocabLayout::make(int vocab_size) {
  if (vocab_size < 32) {
    throw std::invalid_argument("vocabulary of size " + std::to_string(vocab_size) +
                                " cannot host distinct digit/word/entity/filler classes (need >= 32)");
  }
  VocabLayout v;
  v.vocab_size = vocab_size;
  v.digits = {kSpecialCount, kSpecialCount + 10};
  const TokenId rest = vocab_size - v.digits.end;
  const TokenId quarter = rest / 4;
  v.words = {v.digits.end, v.digits.end + quarter};
  v.entities = {v.words.end, v.words.end + quarter};
  v.filler = {v.entities.end, vocab_size};
  return v;
}

std::vector<std::vector<TokenId>> filler_sentences(const VocabLayout& vocab, std::uint64_t seed) {
  check_layout(vocab);
  Rng rng(derive_seed(seed, kFillerStream));
  std::vector<std::vector<TokenId>> sentences(5);
  for (auto& s : sentences) {
    const auto words = rng.range(3, 6);
    for (std::int64_t k = 0; k < words; ++k) s.push_back(draw(rng, vocab.filler));
    s.push_back(VocabLayout::kPeriod);
  }
  return sentences;
}

std::vector<Document> gen_passkey_corpus(const PasskeyConfig& config, const VocabLayout& vocab) {
  check_layout(vocab);
  if (config.key_tokens == 0 || config.value_tokens == 0) {
    throw std::invalid_argument("passkey key and value spans must be non-empty");
  }
  const std::size_t needle = 2 + config.key_tokens + config.value_tokens;
  const std::size_t query = 2 + config.key_tokens;
  const std::size_t fixed = needle + config.distance + query + config.value_tokens;
  if (config.distance >= config.length || fixed > config.length) {
    throw std::invalid_argument("passkey distance " + std::to_string(config.distance) +
                                " does not fit a document of length " +
                                std::to_string(config.length));
  }
  const auto sentences = filler_sentences(vocab, config.seed);
  std::vector<Document> docs(config.count);
  for (std::size_t d = 0; d < config.count; ++d) {
    Rng rng(derive_seed(config.seed, d + 1));
    SentenceCycle filler(sentences, rng);
    std::vector<TokenId> key(config.key_tokens), value(config.value_tokens);
    for (auto& k : key) k = draw(rng, vocab.words);
    for (auto& v : value) v = draw(rng, vocab.digits);

    Document& doc = docs[d];
    doc.ids.reserve(config.length);
    filler.emit(doc.ids, config.length - fixed);
    doc.ids.push_back(VocabLayout::kKeyMarker);
    doc.ids.insert(doc.ids.end(), key.begin(), key.end());
    doc.ids.push_back(VocabLayout::kValueMarker);
    doc.ids.insert(doc.ids.end(), value.begin(), value.end());
    filler.emit(doc.ids, config.distance);
    doc.ids.push_back(VocabLayout::kQueryMarker);
    for (auto k : key) {
      doc.marked.push_back(doc.ids.size());
      doc.ids.push_back(k);
    }
    doc.ids.push_back(VocabLayout::kValueMarker);
    for (auto v : value) {
      doc.marked.push_back(doc.ids.size());
      doc.ids.push_back(v);
    }
    doc.answers = value;
  }
  return docs;
}

std::vector<Document> gen_entity_recurrence_corpus(const EntityConfig& config,
                                                   const VocabLayout& vocab) {
  check_layout(vocab);
  if (config.gap < 1) throw std::invalid_argument("entity recurrence gap must be >= 1");
  if (config.span_tokens < 1) throw std::invalid_argument("entity spans must be non-empty");
  if (config.filler_order < 1 || config.filler_order > 3) {
    throw std::invalid_argument("filler Markov order must be in [1, 3]");
  }
  if (config.length < 2) throw std::invalid_argument("entity documents need length >= 2");

  // Peaked filler chain over the filler class, shared by the whole corpus.
  const auto f = static_cast<std::size_t>(vocab.filler.size());
  std::size_t contexts = 1;
  for (int k = 0; k < config.filler_order; ++k) contexts *= f;
  std::vector<double> chain(contexts * f);
  {
    Rng rng(derive_seed(config.seed, kChainStream));
    for (auto& p : chain) p = std::exp(3.0 * rng.normal());
  }

  std::vector<std::vector<TokenId>> pool(config.entity_pool);
  {
    Rng rng(derive_seed(config.seed, kPoolStream));
    for (auto& span : pool) {
      span.resize(config.span_tokens);
      for (auto& t : span) t = draw(rng, vocab.entities);
    }
  }

  const std::size_t jitter = std::min(config.jitter, config.gap - 1);
  std::vector<Document> docs(config.count);
  for (std::size_t d = 0; d < config.count; ++d) {
    Rng rng(derive_seed(config.seed, d + 1));
    Document& doc = docs[d];
    std::vector<std::size_t> state(static_cast<std::size_t>(config.filler_order));
    for (auto& s : state) s = rng.below(f);

    auto emit_filler = [&](std::size_t count) {
      for (std::size_t k = 0; k < count && doc.ids.size() < config.length; ++k) {
        std::size_t ctx = 0;
        for (auto s : state) ctx = ctx * f + s;
        const auto next = rng.categorical(std::span<const double>(chain).subspan(ctx * f, f));
        std::rotate(state.begin(), state.begin() + 1, state.end());
        state.back() = next;
        doc.ids.push_back(vocab.filler.at(next));
      }
    };

    if (pool.empty()) {
      emit_filler(config.length);
      continue;
    }
    const auto& entity = pool[rng.below(pool.size())];
    emit_filler(rng.below(std::min(config.gap, config.length / 4) + 1));
    bool first = true;
    while (doc.ids.size() < config.length) {
      doc.ids.push_back(VocabLayout::kEntityMarker);
      for (auto t : entity) {
        if (doc.ids.size() >= config.length) break;
        if (!first) doc.marked.push_back(doc.ids.size());
        doc.ids.push_back(t);
      }
      first = false;
      const auto lo = static_cast<std::int64_t>(config.gap - jitter);
      const auto hi = static_cast<std::int64_t>(config.gap + jitter);
      emit_filler(static_cast<std::size_t>(rng.range(lo, hi)));
    }
    doc.ids.resize(config.length);
  }
  return docs;
}

}  // namespace tokweight
