#include "fixtures.hpp"

#include <unistd.h>

#include "tokweight/checkpoint.hpp"
#include "tokweight/config.hpp"
#include "tokweight/pipeline.hpp"

using namespace tokweight;

namespace fixtures {

std::filesystem::path dir() {
  std::filesystem::path d = TOKWEIGHT_FIXTURE_DIR;
  std::filesystem::create_directories(d);
  return d;
}

TinyLm cached(const std::string& name, const std::function<TinyLm()>& make) {
  const auto path = dir() / (name + ".ckpt");
  if (std::filesystem::exists(path)) return load_checkpoint(path);
  auto model = make();
  // Write then rename so concurrent test processes never see a partial file.
  const auto tmp = dir() / (name + ".ckpt." + std::to_string(::getpid()));
  save_checkpoint(model, tmp);
  std::filesystem::rename(tmp, path);
  return model;
}

MarkovOracle markov_oracle() { return MarkovOracle::random(kMarkovOrder, kMarkovVocab, kMarkovSeed); }

std::vector<TokenSequence> markov_eval_sequences(std::size_t count) {
  const auto docs = markov_oracle().sample(count, kMarkovLength, kMarkovSeed + 1000);
  return chunk_documents(docs, kMarkovLength);
}

TinyLm markov_model() {
  return cached("markov_o2_v8", [] {
    const auto oracle = markov_oracle();
    const auto seqs = chunk_documents(oracle.sample(4000, kMarkovLength, kMarkovSeed + 1), kMarkovLength);
    ModelConfig mc;
    mc.layers = 2;
    mc.dim = 32;
    mc.heads = 2;
    mc.ff_dim = 128;
    mc.vocab = kMarkovVocab;
    mc.max_context = static_cast<int>(kMarkovLength);
    auto model = TinyLm::init(mc, 1);
    ScorerSpec uniform;
    TrainConfig tc;
    tc.batch_size = 16;
    tc.seed = 1;
    tc.weight_decay = 0.0;
    tc.learning_rate = 3e-3;
    tc.total_steps = 1500;
    model = run_training(std::move(model), seqs, uniform, tc).model;
    tc.learning_rate = 3e-4;
    tc.warmup_steps = 0;
    tc.total_steps = 1000;
    tc.seed = 2;
    return run_training(std::move(model), seqs, uniform, tc).model;
  });
}

TinyLm base_model() {
  return cached("base_c64", [] {
    CorpusSpec pk;
    pk.kind = "passkey";
    pk.length = 64;
    pk.count = 2000;
    pk.distance_min = 4;
    pk.distance_max = 40;
    pk.seed = 11;
    CorpusSpec en;
    en.kind = "entity";
    en.length = 64;
    en.count = 2000;
    en.entity_gap = 20;
    en.entity_jitter = 4;
    en.seed = 12;
    const auto a = build_corpus(pk);
    const auto b = build_corpus(en);
    std::vector<TokenSequence> seqs;
    for (std::size_t k = 0; k < a.size(); ++k) {
      seqs.push_back({2 * k, a[k].ids});
      seqs.push_back({2 * k + 1, b[k].ids});
    }
    ModelConfig mc;
    mc.max_context = 64;
    TrainConfig tc;
    tc.total_steps = 5000;
    tc.batch_size = 16;
    tc.learning_rate = 3e-3;
    tc.seed = 1;
    ScorerSpec uniform;
    return run_training(TinyLm::init(mc, 1), seqs, uniform, tc).model;
  });
}

std::vector<TokenId> random_ids(Rng& rng, int vocab, std::size_t n) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
  return out;
}

}  // namespace fixtures
