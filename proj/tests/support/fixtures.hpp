#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/markov.hpp"
#include "tokweight/rng.hpp"
#include "tokweight/tinylm.hpp"

namespace fixtures {

std::filesystem::path dir();

/// Loads <dir>/<name>.ckpt, or builds it with `make` and stores it. Builds
/// are deterministic, so the cache only saves time.
tokweight::TinyLm cached(const std::string& name, const std::function<tokweight::TinyLm()>& make);

inline constexpr int kMarkovOrder = 2;
inline constexpr int kMarkovVocab = 8;
inline constexpr std::size_t kMarkovLength = 64;
inline constexpr std::uint64_t kMarkovSeed = 5;

tokweight::MarkovOracle markov_oracle();
/// Held-out samples of the fixture chain.
std::vector<tokweight::TokenSequence> markov_eval_sequences(std::size_t count);
/// Small model trained to convergence on samples of the fixture chain.
tokweight::TinyLm markov_model();

/// Context-64 model pretrained on short passkey and entity-recurrence documents.
tokweight::TinyLm base_model();

std::vector<tokweight::TokenId> random_ids(tokweight::Rng& rng, int vocab, std::size_t n);

}  // namespace fixtures
