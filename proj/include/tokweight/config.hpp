#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/evalbench.hpp"
#include "tokweight/pipeline.hpp"
#include "tokweight/tinylm.hpp"
#include "tokweight/train.hpp"

namespace tokweight {

/// Invalid configuration; `field` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct CorpusSpec {
  std::string kind = "mixed";  // passkey | entity | mixed | markov
  int vocab = 128;
  std::size_t length = 256;
  std::size_t count = 64;
  std::uint64_t seed = 0;
  std::size_t distance_min = 80;
  std::size_t distance_max = 200;
  std::size_t entity_gap = 100;
  std::size_t entity_jitter = 8;
  std::size_t entity_pool = 64;
  int markov_order = 2;
};

/// Generates the corpus: one record per sequence with answers and marks.
/// `mixed` alternates passkey and entity-recurrence documents.
std::vector<CorpusRecord> build_corpus(const CorpusSpec& spec);

std::vector<TokenSequence> to_sequences(std::span<const CorpusRecord> records);

/// Flat `section.key = value` configuration. Every key has a default; unknown
/// keys are rejected. `#` starts a comment.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);

  /// Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string text() const;  // resolved config, one `key = value` per line, sorted
  std::uint64_t hash() const;

  std::uint64_t seed() const;
  std::filesystem::path out() const;
  CorpusSpec corpus() const;
  ModelConfig model() const;
  TrainConfig train() const;
  ScorerSpec scorer() const;
  BenchmarkConfig eval() const;

  /// Validates every section and that referenced files exist.
  void validate() const;

 private:
  std::string str(const std::string& key) const { return get(key); }
  std::uint64_t u64(const std::string& key) const;
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  int i32(const std::string& key) const;
  double f64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> size_list(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

}  // namespace tokweight
