#include "tokweight/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "tokweight/checkpoint.hpp"
#include "tokweight/rng.hpp"
#include "tokweight/window_plan.hpp"

namespace tokweight {

ScorerMode parse_scorer_mode(const std::string& name) {
  if (name == "frozen") return ScorerMode::kFrozen;
  if (name == "unfrozen") return ScorerMode::kUnfrozen;
  if (name == "weak-to-strong") return ScorerMode::kWeakToStrong;
  throw std::invalid_argument("unknown scorer mode '" + name + "'");
}

std::string to_string(ScorerMode mode) {
  switch (mode) {
    case ScorerMode::kFrozen: return "frozen";
    case ScorerMode::kUnfrozen: return "unfrozen";
    case ScorerMode::kWeakToStrong: return "weak-to-strong";
  }
  throw std::invalid_argument("unknown scorer mode");
}

ScoreFunction parse_score_function(const std::string& name) {
  if (name == "signed") return ScoreFunction::kSigned;
  if (name == "abs") return ScoreFunction::kAbs;
  if (name == "PPMI") return ScoreFunction::kPpmi;
  if (name == "NPMI") return ScoreFunction::kNpmi;
  if (name == "sPPMI") return ScoreFunction::kShiftedPpmi;
  if (name == "sNPMI") return ScoreFunction::kShiftedNpmi;
  if (name == "entropy") return ScoreFunction::kEntropy;
  throw std::invalid_argument("unknown scoring function '" + name + "'");
}

std::string to_string(ScoreFunction function) {
  switch (function) {
    case ScoreFunction::kSigned: return "signed";
    case ScoreFunction::kAbs: return "abs";
    case ScoreFunction::kPpmi: return "PPMI";
    case ScoreFunction::kNpmi: return "NPMI";
    case ScoreFunction::kShiftedPpmi: return "sPPMI";
    case ScoreFunction::kShiftedNpmi: return "sNPMI";
    case ScoreFunction::kEntropy: return "entropy";
  }
  throw std::invalid_argument("unknown scoring function");
}

std::size_t ScorerSpec::effective_overlap() const {
  return overlap == 0 ? default_overlap(short_context) : overlap;
}

void ScorerSpec::validate(std::size_t long_context) const {
  if (short_context < 2) throw std::invalid_argument("scorer.short_context must be >= 2");
  if (short_context >= long_context) {
    throw std::invalid_argument("scorer.short_context (" + std::to_string(short_context) +
                                ") must be below the long context (" + std::to_string(long_context) + ")");
  }
  if (effective_overlap() >= short_context) {
    throw std::invalid_argument("scorer.overlap must be below scorer.short_context");
  }
  const bool shifted = function == ScoreFunction::kShiftedPpmi || function == ScoreFunction::kShiftedNpmi;
  if (shifted && shift < 2) throw std::invalid_argument("scorer.shift must be >= 2");
  switch (postprocess.kind) {
    case PostprocessTag::Kind::kSparse:
      if (!(postprocess.kappa > 0.0 && postprocess.kappa <= 1.0)) {
        throw std::invalid_argument("scorer.kappa must be in (0, 1]");
      }
      break;
    case PostprocessTag::Kind::kDense:
      if (!(postprocess.lambda >= 0.0 && postprocess.lambda <= 1.0)) {
        throw std::invalid_argument("scorer.lambda must be in [0, 1]");
      }
      if (function == ScoreFunction::kSigned) {
        throw std::invalid_argument("scorer.function: signed scores cannot be dense-normalized");
      }
      break;
    case PostprocessTag::Kind::kUniform: break;
  }
  if (uses_reference() && reference.empty()) {
    throw std::invalid_argument("scorer.reference is required for " + to_string(mode) + " scoring");
  }
}

std::uint64_t scorer_fingerprint(std::span<const std::uint8_t> checkpoint, std::size_t short_context,
                                 std::size_t overlap, const std::string& function_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (auto b : checkpoint) feed(b);
  std::vector<std::uint8_t> tail;
  le::put_u64(tail, short_context);
  le::put_u64(tail, overlap);
  tail.insert(tail.end(), function_id.begin(), function_id.end());
  for (auto b : tail) feed(b);
  return h;
}

const ScoreCacheEntry& ScoreCache::at(std::uint64_t seq_id) const {
  const auto it = entries.find(seq_id);
  if (it == entries.end()) throw std::out_of_range("no cached scores for seq_id " + std::to_string(seq_id));
  return it->second;
}

std::vector<std::uint8_t> score_cache_bytes(const ScoreCache& cache) {
  std::vector<std::uint8_t> out{'S', 'W', 'C', '1'};
  le::put_u64(out, cache.fingerprint);
  le::put_u32(out, static_cast<std::uint32_t>(cache.short_context));
  le::put_u32(out, static_cast<std::uint32_t>(cache.overlap));
  le::put_u32(out, static_cast<std::uint32_t>(cache.entries.size()));
  for (const auto& [id, e] : cache.entries) {
    if (e.short_logp.size() != e.long_logp.size()) {
      throw std::invalid_argument("cache entry " + std::to_string(id) + " has mismatched traces");
    }
    le::put_u64(out, id);
    le::put_u32(out, static_cast<std::uint32_t>(e.short_logp.size()));
    for (double v : e.short_logp) le::put_f64(out, v);
    for (double v : e.long_logp) le::put_f64(out, v);
  }
  return out;
}

ScoreCache parse_score_cache(std::span<const std::uint8_t> bytes) {
  le::Reader r(bytes);
  r.expect_magic("SWC1");
  ScoreCache cache;
  cache.fingerprint = r.u64();
  cache.short_context = r.u32();
  cache.overlap = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    ScoreCacheEntry e;
    e.seq_id = r.u64();
    const std::uint32_t n = r.u32();
    e.short_logp.resize(n);
    e.long_logp.resize(n);
    for (auto& v : e.short_logp) v = r.f64();
    for (auto& v : e.long_logp) v = r.f64();
    cache.entries.emplace(e.seq_id, std::move(e));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in score cache");
  return cache;
}

void save_score_cache(const ScoreCache& cache, const std::filesystem::path& path) {
  le::write_file(path, score_cache_bytes(cache));
}

ScoreCache load_score_cache(const std::filesystem::path& path, std::uint64_t expected) {
  auto cache = parse_score_cache(le::read_file(path));
  if (cache.fingerprint != expected) {
    throw StaleCacheError("score cache " + path.string() + " was produced by a different scorer");
  }
  return cache;
}

ScoreCache score_frozen(const TinyLm& reference, const TinyLm& long_model,
                        std::span<const TokenSequence> sequences, std::size_t short_context,
                        std::size_t overlap, const std::string& function_id) {
  if (static_cast<std::size_t>(reference.config().max_context) < short_context) {
    throw std::invalid_argument("reference context is shorter than the short context");
  }
  if (reference.config().vocab != long_model.config().vocab) {
    throw std::invalid_argument("reference and training model vocabularies differ");
  }
  if (overlap == 0) overlap = default_overlap(short_context);
  ScoreCache cache;
  cache.fingerprint = scorer_fingerprint(checkpoint_bytes(reference), short_context, overlap, function_id);
  cache.short_context = short_context;
  cache.overlap = overlap;
  const auto long_context = static_cast<std::size_t>(long_model.config().max_context);
  for (const auto& seq : sequences) {
    ScoreCacheEntry e;
    e.seq_id = seq.seq_id;
    e.short_logp = forward_logprobs(reference, seq, short_context, overlap).logp;
    e.long_logp = forward_logprobs(long_model, seq, std::min(long_context, seq.size())).logp;
    cache.entries[seq.seq_id] = std::move(e);
  }
  return cache;
}

LogProbTrace unfrozen_short_trace(const TinyLm& model, const TokenSequence& sequence,
                                  const LogProbTrace& long_trace, std::size_t short_context,
                                  std::size_t overlap) {
  const std::size_t n = sequence.size();
  if (long_trace.size() != n) throw std::invalid_argument("long trace length differs from sequence");
  LogProbTrace trace{sequence.seq_id, short_context, long_trace.logp};
  if (n <= short_context) return trace;
  if (overlap == 0) overlap = default_overlap(short_context);
  const auto plan = plan_windows(n, short_context, overlap);
  const std::span<const TokenId> ids(sequence.ids);
  // The first window covers exactly the positions copied from the long trace.
  for (std::size_t k = 1; k < plan.entries.size(); ++k) {
    const auto& e = plan.entries[k];
    const auto fwd = model.forward(ids.subspan(e.window_start, e.window_end - e.window_start));
    for (std::size_t i = e.predict_start; i < e.predict_end; ++i) {
      trace.logp[i] = fwd.target_logp[i - e.window_start];
    }
  }
  return trace;
}

ScoreVector compute_scores(const ScorerSpec& spec, const LogProbTrace& short_trace,
                           const LogProbTrace& long_trace, const ForwardResult<float>* forward) {
  ScoreVector out;
  if (spec.function == ScoreFunction::kEntropy) {
    if (forward == nullptr) throw std::invalid_argument("entropy scoring needs predictive distributions");
    out = entropy_weight(*forward, long_trace.seq_id);
  } else {
    out = signed_score(short_trace, long_trace);
    switch (spec.function) {
      case ScoreFunction::kSigned: break;
      case ScoreFunction::kAbs: out = abs_score(out); break;
      case ScoreFunction::kPpmi: out = pmi_variant(out, PmiVariant::kPpmi); break;
      case ScoreFunction::kNpmi: out = pmi_variant(out, PmiVariant::kNpmi); break;
      case ScoreFunction::kShiftedPpmi: out = pmi_variant(out, PmiVariant::kShiftedPpmi, spec.shift); break;
      case ScoreFunction::kShiftedNpmi: out = pmi_variant(out, PmiVariant::kShiftedNpmi, spec.shift); break;
      case ScoreFunction::kEntropy: break;
    }
  }
  out.provenance.scorer = to_string(spec.mode);
  out.provenance.short_context = spec.short_context;
  out.provenance.long_context = long_trace.context_limit;
  return out;
}

ScoreVector score_unfrozen(const TinyLm& model, const TokenSequence& sequence, const ScorerSpec& spec) {
  const auto C = static_cast<std::size_t>(model.config().max_context);
  if (sequence.size() > C) throw std::invalid_argument("sequence does not fit the model context");
  const auto fwd = model.forward(sequence.ids);
  const LogProbTrace long_trace{sequence.seq_id, C, fwd.target_logp};
  const auto short_trace =
      unfrozen_short_trace(model, sequence, long_trace, spec.short_context, spec.effective_overlap());
  return compute_scores(spec, short_trace, long_trace, &fwd);
}

WeightVector postprocess(const ScoreVector& scores, const PostprocessTag& tag) {
  switch (tag.kind) {
    case PostprocessTag::Kind::kSparse: return sparsify_quantile(scores, tag.kappa, tag.seed);
    case PostprocessTag::Kind::kDense: return interpolate_uniform(normalize_to_length(scores), tag.lambda);
    case PostprocessTag::Kind::kUniform: break;
  }
  return uniform_weights(scores.seq_id, scores.size());
}

std::string to_json_line(const StepLog& log) {
  nlohmann::ordered_json j;
  j["step"] = log.step;
  j["loss"] = log.loss;
  j["w_mean"] = log.w_mean;
  j["w_max"] = log.w_max;
  j["nnz_frac"] = log.nnz_frac;
  return j.dump();
}

BatchSchedule::BatchSchedule(std::size_t corpus_size, const TrainConfig& config)
    : corpus_size_(corpus_size), per_step_(config.batch_size * config.grad_accum), seed_(config.seed) {
  if (corpus_size == 0) throw std::invalid_argument("training corpus is empty");
  if (per_step_ == 0) throw std::invalid_argument("train.batch_size must be positive");
}

std::vector<std::size_t> BatchSchedule::next() {
  std::vector<std::size_t> out;
  out.reserve(per_step_);
  while (out.size() < per_step_) {
    if (cursor_ == order_.size()) {
      order_.resize(corpus_size_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      Rng rng(derive_seed(seed_, 0x62617463ULL + epoch_++));
      rng.shuffle(std::span<std::size_t>(order_));
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

namespace {

StepLog summarize(std::size_t step, double loss, std::span<const std::vector<double>> weights) {
  StepLog log{step, loss, 0.0, 0.0, 0.0};
  std::size_t total = 0, nonzero = 0;
  double sum = 0.0;
  for (const auto& w : weights) {
    for (double x : w) {
      sum += x;
      log.w_max = std::max(log.w_max, x);
      nonzero += x != 0.0;
    }
    total += w.size();
  }
  log.w_mean = total ? sum / static_cast<double>(total) : 0.0;
  log.nnz_frac = total ? static_cast<double>(nonzero) / static_cast<double>(total) : 0.0;
  return log;
}

void check_fits(std::span<const TokenSequence> corpus, const TinyLm& model) {
  for (const auto& seq : corpus) {
    seq.validate(model.config().vocab, static_cast<std::size_t>(model.config().max_context));
  }
}

void emit(const StepLog& log, std::ostream* out) {
  if (out != nullptr) *out << to_json_line(log) << '\n' << std::flush;
}

ScoreCache prepare_frozen_cache(const TinyLm& model, std::span<const TokenSequence> corpus,
                                const ScorerSpec& spec, const RunOptions& options, bool& hit) {
  const auto& reference = *options.reference;
  const std::string fn = to_string(spec.function);
  const auto overlap = spec.effective_overlap();
  const auto fingerprint = scorer_fingerprint(checkpoint_bytes(reference), spec.short_context, overlap, fn);
  hit = false;
  if (options.cache && std::filesystem::exists(*options.cache)) {
    try {
      auto cache = load_score_cache(*options.cache, fingerprint);
      const bool complete = std::all_of(corpus.begin(), corpus.end(), [&](const TokenSequence& s) {
        const auto it = cache.entries.find(s.seq_id);
        return it != cache.entries.end() && it->second.short_logp.size() == s.size();
      });
      if (complete) {
        hit = true;
        return cache;
      }
      if (options.warnings) *options.warnings << "warning: score cache is incomplete; rescoring\n";
    } catch (const StaleCacheError& e) {
      if (options.warnings) *options.warnings << "warning: " << e.what() << "; rescoring\n";
    }
  }
  auto cache = score_frozen(reference, model, corpus, spec.short_context, overlap, fn);
  if (options.cache) save_score_cache(cache, *options.cache);
  return cache;
}

}  // namespace

RunResult run_training(TinyLm model, std::span<const TokenSequence> corpus, const ScorerSpec& spec,
                       const TrainConfig& config, const RunOptions& options) {
  config.validate();
  const auto C = static_cast<std::size_t>(model.config().max_context);
  spec.validate(C);
  check_fits(corpus, model);

  RunResult result{std::move(model), {}, false};
  TinyLm& live = result.model;
  const bool uniform = spec.postprocess.kind == PostprocessTag::Kind::kUniform;
  const bool frozen = spec.uses_reference() && !uniform;

  ScoreCache cache;
  if (frozen) {
    if (options.reference == nullptr) {
      throw std::invalid_argument("scorer.reference checkpoint is required for " + to_string(spec.mode));
    }
    if (options.reference->config().vocab != live.config().vocab) {
      throw std::invalid_argument("scorer.reference vocabulary differs from the training model");
    }
    if (!options.recompute_reference) cache = prepare_frozen_cache(live, corpus, spec, options, result.cache_hit);
  }

  auto state = OptimizerState::create(live);
  BatchSchedule schedule(corpus.size(), config);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    const auto indices = schedule.next();
    std::vector<TokenSequence> batch;
    batch.reserve(indices.size());
    for (auto i : indices) batch.push_back(corpus[i]);

    std::vector<ScoreVector> scores(uniform ? 0 : batch.size());
    std::vector<WeightVector> weights(batch.size());
    std::vector<std::vector<double>> raw(batch.size());
    const auto provider = [&](std::size_t b, const ForwardResult<float>& fwd) {
      const auto& seq = batch[b];
      if (uniform) {
        weights[b] = uniform_weights(seq.seq_id, seq.size());
      } else {
        const LogProbTrace long_trace{seq.seq_id, C, fwd.target_logp};
        LogProbTrace short_trace;
        if (!frozen) {
          short_trace = unfrozen_short_trace(live, seq, long_trace, spec.short_context, spec.effective_overlap());
        } else if (options.recompute_reference) {
          short_trace = forward_logprobs(*options.reference, seq, spec.short_context, spec.effective_overlap());
        } else {
          short_trace = LogProbTrace{seq.seq_id, spec.short_context, cache.at(seq.seq_id).short_logp};
        }
        scores[b] = compute_scores(spec, short_trace, long_trace, &fwd);
        weights[b] = postprocess(scores[b], spec.postprocess);
      }
      raw[b] = weights[b].weights;
      return raw[b];
    };
    const auto r = train_step(live, state, batch, provider, config, step);
    const auto log = summarize(step, r.loss, raw);
    result.log.push_back(log);
    emit(log, options.log);
    if (options.observer) options.observer(StepView{step, batch, scores, weights});
  }
  return result;
}

RunResult run_unweighted(TinyLm model, std::span<const TokenSequence> corpus, const TrainConfig& config,
                         std::ostream* log) {
  config.validate();
  check_fits(corpus, model);
  RunResult result{std::move(model), {}, false};
  auto state = OptimizerState::create(result.model);
  BatchSchedule schedule(corpus.size(), config);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    std::vector<TokenSequence> batch;
    for (auto i : schedule.next()) batch.push_back(corpus[i]);
    std::vector<std::vector<double>> ones;
    for (const auto& s : batch) ones.emplace_back(s.size(), 1.0);
    const auto r = train_step(result.model, state, batch, std::span<const std::vector<double>>(ones), config, step);
    result.log.push_back(summarize(step, r.loss, ones));
    emit(result.log.back(), log);
  }
  return result;
}

}  // namespace tokweight
