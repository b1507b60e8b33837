#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "tokweight/checkpoint.hpp"
#include "tokweight/pipeline.hpp"

using namespace tokweight;

namespace {

ModelConfig small_config(int dim = 16) {
  ModelConfig c;
  c.layers = 1;
  c.dim = dim;
  c.heads = 2;
  c.ff_dim = 2 * dim;
  c.vocab = 12;
  c.max_context = 32;
  return c;
}

std::vector<TokenSequence> random_corpus(std::size_t count, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back({100 + k, fixtures::random_ids(rng, 12, length)});
  return out;
}

TrainConfig small_train(std::size_t steps) {
  TrainConfig t;
  t.total_steps = steps;
  t.batch_size = 4;
  t.warmup_steps = 2;
  t.seed = 3;
  return t;
}

ScorerSpec spec_of(ScorerMode mode, ScoreFunction fn, PostprocessTag tag) {
  ScorerSpec s;
  s.mode = mode;
  s.function = fn;
  s.postprocess = tag;
  s.short_context = 8;
  if (mode != ScorerMode::kUnfrozen) s.reference = "ref";
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto p = fixtures::dir() / name;
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST_CASE("mode and function names round trip") {
  for (auto m : {ScorerMode::kFrozen, ScorerMode::kUnfrozen, ScorerMode::kWeakToStrong}) {
    CHECK(parse_scorer_mode(to_string(m)) == m);
  }
  for (auto f : {ScoreFunction::kSigned, ScoreFunction::kAbs, ScoreFunction::kPpmi, ScoreFunction::kNpmi,
                 ScoreFunction::kShiftedPpmi, ScoreFunction::kShiftedNpmi, ScoreFunction::kEntropy}) {
    CHECK(parse_score_function(to_string(f)) == f);
  }
  CHECK(to_string(ScorerMode::kWeakToStrong) == "weak-to-strong");
  CHECK_THROWS_AS(parse_scorer_mode("thawed"), std::invalid_argument);
  CHECK_THROWS_AS(parse_score_function("pmi"), std::invalid_argument);
}

TEST_CASE("scorer spec validation") {
  auto s = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kAbs, PostprocessTag::sparse(0.2, 0));
  CHECK_NOTHROW(s.validate(32));
  CHECK(s.effective_overlap() == 2);
  CHECK_THROWS_AS(s.validate(8), std::invalid_argument);
  s.overlap = 8;
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
  s.overlap = 0;
  s.postprocess.kappa = 0.0;
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
  s = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kShiftedPpmi, PostprocessTag::dense(0.5));
  s.shift = 1;
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
  s = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kAbs, PostprocessTag::dense(1.5));
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
  // Signed scores can be negative, so they cannot be normalized densely.
  s = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kSigned, PostprocessTag::dense(0.5));
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
  s = spec_of(ScorerMode::kFrozen, ScoreFunction::kAbs, PostprocessTag::dense(0.5));
  s.reference.clear();
  CHECK_THROWS_AS(s.validate(32), std::invalid_argument);
}

TEST_CASE("unfrozen short trace copies the first window and unfolds the rest") {
  const auto model = TinyLm::init(small_config(), 1);
  const auto seq = random_corpus(1, 30, 2)[0];
  const auto spec = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kSigned, PostprocessTag::sparse(0.2, 0));
  const auto long_trace = forward_logprobs(model, seq, 32);
  const auto short_trace = unfrozen_short_trace(model, seq, long_trace, 8, 2);
  const auto windowed = forward_logprobs(model, seq, 8, 2);
  for (std::size_t i = 0; i < 30; ++i) {
    if (i < 8) {
      CHECK(short_trace.logp[i] == long_trace.logp[i]);
    } else {
      CHECK(short_trace.logp[i] == windowed.logp[i]);
    }
  }
  const auto scores = score_unfrozen(model, seq, spec);
  for (std::size_t i = 0; i < 8; ++i) CHECK(scores.scores[i] == 0.0);
  CHECK(std::any_of(scores.scores.begin() + 8, scores.scores.end(), [](double x) { return x != 0.0; }));
  CHECK(scores.provenance.scorer == "unfrozen");
}

TEST_CASE("entropy scoring needs a forward pass") {
  const auto spec = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kEntropy, PostprocessTag::dense(0.5));
  const LogProbTrace t{0, 8, {-1.0}};
  CHECK_THROWS_AS(compute_scores(spec, t, t, nullptr), std::invalid_argument);
}

TEST_CASE("score cache round trip and fingerprints") {
  const auto ref = TinyLm::init(small_config(), 4);
  const auto live = TinyLm::init(small_config(), 5);
  const auto corpus = random_corpus(3, 24, 6);
  const auto cache = score_frozen(ref, live, corpus, 8, 2, "abs");
  REQUIRE(cache.entries.size() == 3);
  for (const auto& seq : corpus) {
    const auto& e = cache.at(seq.seq_id);
    CHECK(e.short_logp == forward_logprobs(ref, seq, 8, 2).logp);
    CHECK(e.long_logp == forward_logprobs(live, seq, 32).logp);
  }
  CHECK_THROWS_AS(cache.at(999), std::out_of_range);

  const auto bytes = score_cache_bytes(cache);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "SWC1"));
  const auto back = parse_score_cache(bytes);
  CHECK(back.fingerprint == cache.fingerprint);
  CHECK(back.short_context == 8);
  CHECK(back.overlap == 2);
  CHECK(score_cache_bytes(back) == bytes);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS(parse_score_cache(extra));

  const auto ckpt = checkpoint_bytes(ref);
  const auto fp = scorer_fingerprint(ckpt, 8, 2, "abs");
  CHECK(fp == cache.fingerprint);
  CHECK(scorer_fingerprint(ckpt, 9, 2, "abs") != fp);
  CHECK(scorer_fingerprint(ckpt, 8, 3, "abs") != fp);
  CHECK(scorer_fingerprint(ckpt, 8, 2, "PPMI") != fp);
  CHECK(scorer_fingerprint(checkpoint_bytes(live), 8, 2, "abs") != fp);

  const auto path = temp_path("pipeline_cache_test.bin");
  save_score_cache(cache, path);
  CHECK(load_score_cache(path, fp).entries.size() == 3);
  CHECK_THROWS_AS(load_score_cache(path, fp + 1), StaleCacheError);
  std::filesystem::remove(path);
}

TEST_CASE("batch schedule walks seeded permutations") {
  auto cfg = small_train(1);
  cfg.batch_size = 3;
  cfg.grad_accum = 2;
  BatchSchedule a(10, cfg), b(10, cfg);
  std::vector<std::size_t> seen;
  for (int s = 0; s < 10; ++s) {
    const auto x = a.next();
    CHECK(x.size() == 6);
    CHECK(x == b.next());
    seen.insert(seen.end(), x.begin(), x.end());
  }
  for (std::size_t e = 0; e < 6; ++e) {
    std::set<std::size_t> epoch(seen.begin() + static_cast<std::ptrdiff_t>(10 * e),
                                seen.begin() + static_cast<std::ptrdiff_t>(10 * e + 10));
    CHECK(epoch.size() == 10);
  }
  cfg.seed = 4;
  BatchSchedule c(10, cfg);
  std::vector<std::size_t> other;
  for (int s = 0; s < 10; ++s) {
    const auto x = c.next();
    other.insert(other.end(), x.begin(), x.end());
  }
  CHECK(other != seen);
  CHECK_THROWS_AS(BatchSchedule(0, cfg), std::invalid_argument);
}

TEST_CASE("uniform postprocessing reproduces the unweighted loop") {
  const auto model = TinyLm::init(small_config(), 7);
  const auto corpus = random_corpus(10, 32, 8);
  const auto cfg = small_train(6);
  const auto base = run_unweighted(model, corpus, cfg);
  for (auto tag : {PostprocessTag::uniform(), PostprocessTag::dense(1.0), PostprocessTag::sparse(1.0, 5)}) {
    const auto run = run_training(model, corpus, spec_of(ScorerMode::kUnfrozen, ScoreFunction::kAbs, tag), cfg);
    CHECK(run.model.params() == base.model.params());
    CHECK(run.log.back().loss == base.log.back().loss);
  }
}

TEST_CASE("unfrozen sparse training never weights the first window") {
  const auto model = TinyLm::init(small_config(), 9);
  const auto corpus = random_corpus(10, 32, 10);
  const auto spec = spec_of(ScorerMode::kUnfrozen, ScoreFunction::kAbs, PostprocessTag::sparse(0.25, 1));
  RunOptions opts;
  std::ostringstream log;
  opts.log = &log;
  std::size_t views = 0;
  opts.observer = [&](const StepView& v) {
    ++views;
    REQUIRE(v.scores.size() == v.batch.size());
    for (std::size_t b = 0; b < v.batch.size(); ++b) {
      for (std::size_t i = 0; i < 8; ++i) {
        CHECK(v.scores[b].scores[i] == 0.0);
        CHECK(v.weights[b].weights[i] == 0.0);
      }
    }
  };
  const auto run = run_training(model, corpus, spec, small_train(4), opts);
  CHECK(views == 4);
  REQUIRE(run.log.size() == 4);
  CHECK(run.log[0].nnz_frac == doctest::Approx(8.0 / 32.0));
  CHECK(run.log[0].w_max == doctest::Approx(4.0));
  CHECK(run.log[0].w_mean == doctest::Approx(1.0));
  std::istringstream lines(log.str());
  std::string first;
  std::getline(lines, first);
  CHECK(first == to_json_line(run.log[0]));
  CHECK(first.rfind("{\"step\":1,\"loss\":", 0) == 0);
}

TEST_CASE("frozen training caches reference scores") {
  const auto ref = TinyLm::init(small_config(), 11);
  const auto model = TinyLm::init(small_config(), 12);
  const auto corpus = random_corpus(8, 32, 13);
  const auto spec = spec_of(ScorerMode::kFrozen, ScoreFunction::kAbs, PostprocessTag::dense(0.75));
  const auto path = temp_path("pipeline_frozen_cache.bin");
  RunOptions opts;
  opts.reference = &ref;
  opts.cache = path;
  std::ostringstream warnings;
  opts.warnings = &warnings;

  const auto first = run_training(model, corpus, spec, small_train(3), opts);
  CHECK_FALSE(first.cache_hit);
  CHECK(std::filesystem::exists(path));
  const auto second = run_training(model, corpus, spec, small_train(3), opts);
  CHECK(second.cache_hit);
  CHECK(second.model.params() == first.model.params());
  CHECK(warnings.str().empty());

  RunOptions direct = opts;
  direct.cache.reset();
  direct.recompute_reference = true;
  CHECK(run_training(model, corpus, spec, small_train(3), direct).model.params() == first.model.params());

  // A different reference invalidates the cache with a warning and rewrites it.
  const auto other = TinyLm::init(small_config(), 14);
  opts.reference = &other;
  const auto third = run_training(model, corpus, spec, small_train(3), opts);
  CHECK_FALSE(third.cache_hit);
  CHECK(warnings.str().find("warning") != std::string::npos);
  CHECK(third.model.params() != first.model.params());
  opts.reference = &ref;
  CHECK_FALSE(run_training(model, corpus, spec, small_train(1), opts).cache_hit);

  opts.reference = nullptr;
  CHECK_THROWS_AS(run_training(model, corpus, spec, small_train(1), opts), std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("weak-to-strong scoring uses a smaller reference") {
  const auto ref = TinyLm::init(small_config(8), 15);
  const auto model = TinyLm::init(small_config(16), 16);
  const auto corpus = random_corpus(8, 32, 17);
  const auto spec = spec_of(ScorerMode::kWeakToStrong, ScoreFunction::kPpmi, PostprocessTag::sparse(0.5, 2));
  RunOptions opts;
  opts.reference = &ref;
  std::size_t checked = 0;
  opts.observer = [&](const StepView& v) {
    for (std::size_t b = 0; b < v.batch.size(); ++b) {
      CHECK(v.scores[b].provenance.scorer == "weak-to-strong");
      for (double s : v.scores[b].scores) CHECK(s >= 0.0);
      ++checked;
    }
  };
  const auto run = run_training(model, corpus, spec, small_train(2), opts);
  CHECK(checked == 8);
  CHECK(run.log[0].nnz_frac == doctest::Approx(0.5));
}

TEST_CASE("training rejects sequences longer than the model context") {
  const auto model = TinyLm::init(small_config(), 18);
  const auto corpus = random_corpus(2, 40, 19);
  CHECK_THROWS_AS(run_unweighted(model, corpus, small_train(1)), std::invalid_argument);
}
