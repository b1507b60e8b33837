#include "tokweight/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>

#include "tokweight/rng.hpp"

namespace tokweight {

namespace {

constexpr std::uint64_t kHaystackStream = 0x4a957ULL;

std::size_t kind_index(TaskKind kind) { return static_cast<std::size_t>(kind); }

TokenId draw(Rng& rng, const TokenRange& range) {
  return range.at(rng.below(static_cast<std::uint64_t>(range.size())));
}

std::vector<TokenId> draw_span(Rng& rng, const TokenRange& range, std::size_t n) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = draw(rng, range);
  return out;
}

/// Draws `count` pairwise distinct spans.
std::vector<std::vector<TokenId>> distinct_spans(Rng& rng, const TokenRange& range, std::size_t width,
                                                 std::size_t count) {
  const double capacity = std::pow(static_cast<double>(range.size()), static_cast<double>(width));
  if (static_cast<double>(count) > capacity) {
    throw std::invalid_argument("token class too small for " + std::to_string(count) + " distinct spans");
  }
  std::set<std::vector<TokenId>> seen;
  std::vector<std::vector<TokenId>> out;
  while (out.size() < count) {
    auto s = draw_span(rng, range, width);
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

std::vector<TokenId> distinct_tokens(Rng& rng, const TokenRange& range, std::size_t count) {
  if (count > static_cast<std::size_t>(range.size())) {
    throw std::invalid_argument("token class too small for " + std::to_string(count) + " distinct tokens");
  }
  std::vector<TokenId> all(static_cast<std::size_t>(range.size()));
  std::iota(all.begin(), all.end(), range.begin);
  rng.shuffle(std::span<TokenId>(all));
  all.resize(count);
  return all;
}

std::vector<TokenId> concat(std::initializer_list<std::span<const TokenId>> parts) {
  std::vector<TokenId> out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

/// Filler haystack of `filler` tokens with `blocks` inserted in order at
/// random positions.
std::vector<TokenId> haystack(Rng& rng, const VocabLayout& vocab, std::size_t filler,
                              const std::vector<std::vector<TokenId>>& blocks) {
  std::vector<TokenId> stream;
  for (const auto& s : filler_sentences(vocab, rng.next())) stream.insert(stream.end(), s.begin(), s.end());
  std::size_t pos = rng.below(stream.size());
  std::vector<std::size_t> cuts(blocks.size());
  for (auto& c : cuts) c = rng.below(filler + 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<TokenId> out;
  std::size_t emitted = 0;
  auto emit_until = [&](std::size_t target) {
    for (; emitted < target; ++emitted) {
      out.push_back(stream[pos]);
      pos = (pos + 1) % stream.size();
    }
  };
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    emit_until(cuts[b]);
    out.insert(out.end(), blocks[b].begin(), blocks[b].end());
  }
  emit_until(filler);
  return out;
}

std::size_t block_tokens(const std::vector<std::vector<TokenId>>& blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

void finish(EvalTask& task, Rng& rng, const VocabLayout& vocab, const std::vector<std::vector<TokenId>>& blocks,
            const std::vector<TokenId>& suffix) {
  std::size_t fixed = block_tokens(blocks) + suffix.size() + task.answer_budget;
  for (const auto& f : task.followups) fixed += f.size() + task.answer_budget;
  if (fixed > task.length) {
    throw std::invalid_argument(to_string(task.kind) + " needs " + std::to_string(fixed) +
                                " tokens but the length bucket is " + std::to_string(task.length));
  }
  task.prompt.ids = haystack(rng, vocab, task.length - fixed, blocks);
  task.prompt.ids.insert(task.prompt.ids.end(), suffix.begin(), suffix.end());
}

std::vector<TokenId> needle(std::span<const TokenId> key, std::span<const TokenId> value) {
  const TokenId k[] = {VocabLayout::kKeyMarker};
  const TokenId v[] = {VocabLayout::kValueMarker};
  return concat({k, key, v, value});
}

std::vector<TokenId> query(std::span<const TokenId> key) {
  const TokenId q[] = {VocabLayout::kQueryMarker};
  const TokenId v[] = {VocabLayout::kValueMarker};
  return concat({q, key, v});
}

void gen_niah(EvalTask& task, Rng& rng, const VocabLayout& vocab, const TaskParams& p) {
  const bool single = task.kind == TaskKind::kNiahSingle;
  const std::size_t m = single ? 1 : p.pairs;
  if (m == 0) throw std::invalid_argument("needle count must be positive");
  const auto values = distinct_spans(rng, vocab.digits, p.value_tokens, m);
  std::vector<std::vector<TokenId>> keys;
  if (task.kind == TaskKind::kNiahMultivalue) {
    keys.assign(m, draw_span(rng, vocab.words, p.key_tokens));
  } else {
    keys = distinct_spans(rng, vocab.words, p.key_tokens, m);
  }
  std::vector<std::vector<TokenId>> blocks;
  for (std::size_t k = 0; k < m; ++k) blocks.push_back(needle(keys[k], values[k]));

  std::vector<TokenId> suffix;
  switch (task.kind) {
    case TaskKind::kNiahSingle:
      suffix = query(keys[0]);
      task.answers = {values[0]};
      task.answer_budget = p.value_tokens;
      break;
    case TaskKind::kNiahMultikey: {
      const auto target = rng.below(m);
      suffix = query(keys[target]);
      task.answers = {values[target]};
      task.answer_budget = p.value_tokens;
      break;
    }
    case TaskKind::kNiahMultivalue:
      suffix = query(keys[0]);
      task.answers = values;
      task.answer_budget = m * (p.value_tokens + 1);
      break;
    default: {
      std::vector<std::size_t> order(m);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      suffix = query(keys[order[0]]);
      for (std::size_t q = 0; q < m; ++q) {
        task.answers.push_back(values[order[q]]);
        if (q > 0) task.followups.push_back(query(keys[order[q]]));
      }
      task.answer_budget = p.value_tokens;
      break;
    }
  }
  finish(task, rng, vocab, blocks, suffix);
}

void gen_variable_tracking(EvalTask& task, Rng& rng, const VocabLayout& vocab, const TaskParams& p) {
  const std::size_t k = p.chain;
  if (k == 0) throw std::invalid_argument("variable chain must be non-empty");
  const auto values = distinct_spans(rng, vocab.digits, p.chain_value_tokens, 2);
  const std::size_t chain_tokens = (3 + p.chain_value_tokens) + (k - 1) * 4;
  const std::size_t base = chain_tokens + 2 + p.chain_value_tokens + k;
  // A distractor chain with a different value joins when there is room for it.
  const bool distractor = 2 * (base + chain_tokens) <= task.length;
  const auto names = distinct_tokens(rng, vocab.words, distractor ? 2 * k : k);

  auto chain = [&](std::size_t offset, const std::vector<TokenId>& value) {
    std::vector<std::vector<TokenId>> stmts;
    for (std::size_t t = 0; t < k; ++t) {
      std::vector<TokenId> s{VocabLayout::kAssignMarker, names[offset + t], VocabLayout::kEquals};
      if (t == 0) {
        s.insert(s.end(), value.begin(), value.end());
      } else {
        s.push_back(names[offset + t - 1]);
      }
      stmts.push_back(std::move(s));
    }
    return stmts;
  };
  auto blocks = chain(0, values[0]);
  if (distractor) {
    // Interleave the two chains while keeping each in order.
    const auto other = chain(k, values[1]);
    std::vector<std::vector<TokenId>> merged;
    std::size_t a = 0, b = 0;
    while (a < blocks.size() || b < other.size()) {
      const bool take_a = b == other.size() || (a < blocks.size() && rng.below(2) == 0);
      merged.push_back(take_a ? blocks[a++] : other[b++]);
    }
    blocks = std::move(merged);
  }
  std::vector<TokenId> suffix{VocabLayout::kQueryMarker};
  suffix.insert(suffix.end(), values[0].begin(), values[0].end());
  suffix.push_back(VocabLayout::kEquals);
  for (std::size_t t = 0; t < k; ++t) task.answers.push_back({names[t]});
  task.answer_budget = k;
  finish(task, rng, vocab, blocks, suffix);
}

void gen_common_words(EvalTask& task, Rng& rng, const VocabLayout& vocab, const TaskParams& p) {
  const auto words = static_cast<std::size_t>(vocab.words.size());
  if (p.common_targets == 0 || p.common_targets >= words) {
    throw std::invalid_argument("common_words target count must be in [1, word class size)");
  }
  if (p.common_target_count <= p.common_distractor_count) {
    throw std::invalid_argument("common_words targets must occur more often than distractors");
  }
  const std::size_t distractors =
      p.common_distractors == 0 ? words - p.common_targets : std::min(p.common_distractors, words - p.common_targets);
  const auto chosen = distinct_tokens(rng, vocab.words, p.common_targets + distractors);
  std::vector<TokenId> list;
  for (std::size_t t = 0; t < chosen.size(); ++t) {
    const std::size_t reps = t < p.common_targets ? p.common_target_count : p.common_distractor_count;
    list.insert(list.end(), reps, chosen[t]);
  }
  rng.shuffle(std::span<TokenId>(list));
  list.insert(list.begin(), VocabLayout::kListMarker);
  for (std::size_t t = 0; t < p.common_targets; ++t) task.answers.push_back({chosen[t]});
  task.answer_budget = p.common_targets;
  finish(task, rng, vocab, {list}, {VocabLayout::kQueryMarker, VocabLayout::kListMarker});
}

void gen_frequent_words(EvalTask& task, Rng& rng, const VocabLayout& vocab, const TaskParams& p) {
  const auto words = static_cast<std::size_t>(vocab.words.size());
  if (p.frequent_top == 0 || p.frequent_top >= words) {
    throw std::invalid_argument("frequent_words top count must be in [1, word class size)");
  }
  if (!(p.zeta_exponent > 1.0)) throw std::invalid_argument("zeta exponent must exceed 1");
  const std::size_t overhead = 3 + p.frequent_top;
  if (task.length <= overhead + 2 * p.frequent_top) {
    throw std::invalid_argument("frequent_words does not fit a length bucket of " + std::to_string(task.length));
  }
  const std::size_t list_len = (task.length - overhead) / 2;
  std::vector<double> zeta(words);
  for (std::size_t r = 0; r < words; ++r) zeta[r] = std::pow(static_cast<double>(r + 1), -p.zeta_exponent);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto ranked = distinct_tokens(rng, vocab.words, words);
    std::vector<std::size_t> counts(words, 0);
    std::vector<TokenId> list{VocabLayout::kListMarker};
    for (std::size_t t = 0; t < list_len; ++t) {
      const auto r = rng.categorical(std::span<const double>(zeta));
      ++counts[r];
      list.push_back(ranked[r]);
    }
    std::vector<std::size_t> order(words);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });
    // The answer set must be unambiguous.
    if (counts[order[p.frequent_top - 1]] == counts[order[p.frequent_top]]) continue;
    for (std::size_t t = 0; t < p.frequent_top; ++t) task.answers.push_back({ranked[order[t]]});
    task.answer_budget = p.frequent_top;
    finish(task, rng, vocab, {list}, {VocabLayout::kQueryMarker, VocabLayout::kListMarker});
    return;
  }
  throw std::invalid_argument("frequent_words could not draw an unambiguous top set");
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kNiahSingle: return "niah_single";
    case TaskKind::kNiahMultikey: return "niah_multikey";
    case TaskKind::kNiahMultivalue: return "niah_multivalue";
    case TaskKind::kNiahMultiquery: return "niah_multiquery";
    case TaskKind::kVariableTracking: return "variable_tracking";
    case TaskKind::kCommonWords: return "common_words";
    case TaskKind::kFrequentWords: return "frequent_words";
  }
  throw std::invalid_argument("unknown task kind");
}

TaskKind parse_task_kind(const std::string& name) {
  for (auto k : kAllTaskKinds) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

TaskParams TaskParams::desk(std::size_t length) {
  TaskParams p;
  const std::size_t scale = std::max<std::size_t>(1, length / 64);
  p.common_targets = 3;
  p.common_target_count = 5 * scale;
  p.common_distractor_count = (p.common_target_count + 9) / 10;
  p.common_distractors = 12;
  return p;
}

std::size_t EvalTask::total_budget() const {
  std::size_t n = answer_budget;
  for (const auto& f : followups) n += f.size() + answer_budget;
  return n;
}

EvalTask gen_eval_task(TaskKind kind, std::size_t length, std::uint64_t seed, const VocabLayout& vocab,
                       const TaskParams& params) {
  EvalTask task;
  task.kind = kind;
  task.length = length;
  task.prompt.seq_id = seed;
  Rng rng(derive_seed(seed, kHaystackStream + kind_index(kind)));
  switch (kind) {
    case TaskKind::kNiahSingle:
    case TaskKind::kNiahMultikey:
    case TaskKind::kNiahMultivalue:
    case TaskKind::kNiahMultiquery: gen_niah(task, rng, vocab, params); break;
    case TaskKind::kVariableTracking: gen_variable_tracking(task, rng, vocab, params); break;
    case TaskKind::kCommonWords: gen_common_words(task, rng, vocab, params); break;
    case TaskKind::kFrequentWords: gen_frequent_words(task, rng, vocab, params); break;
  }
  return task;
}

std::vector<TokenId> greedy_decode(const TinyLm& model, std::span<const TokenId> prompt, std::size_t max_new,
                                   std::size_t context_limit) {
  const auto C = static_cast<std::size_t>(model.config().max_context);
  const std::size_t limit = context_limit == 0 ? C : std::min(context_limit, C);
  if (limit < 1) throw std::invalid_argument("decoding needs a positive context");
  std::vector<TokenId> text(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  out.reserve(max_new);
  for (std::size_t s = 0; s < max_new; ++s) {
    // The model predicts position t from tokens [0, t); append a placeholder
    // so the last row is the next-token distribution.
    const std::size_t visible = std::min(text.size() + 1, limit);
    std::vector<TokenId> window(text.end() - static_cast<std::ptrdiff_t>(visible - 1), text.end());
    window.push_back(0);
    const auto fwd = model.forward(window);
    const auto row = fwd.row(window.size() - 1);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    text.push_back(best);
    out.push_back(best);
  }
  return out;
}

std::vector<TokenId> run_task(const TinyLm& model, const EvalTask& task, std::size_t context_limit) {
  std::vector<TokenId> text = task.prompt.ids;
  std::vector<TokenId> decoded;
  auto segment = [&] {
    const auto part = greedy_decode(model, text, task.answer_budget, context_limit);
    text.insert(text.end(), part.begin(), part.end());
    decoded.insert(decoded.end(), part.begin(), part.end());
  };
  segment();
  for (const auto& f : task.followups) {
    text.insert(text.end(), f.begin(), f.end());
    segment();
  }
  return decoded;
}

double score_recall(std::span<const TokenId> output, std::span<const std::vector<TokenId>> expected) {
  if (expected.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& span : expected) {
    if (span.empty()) continue;
    if (std::search(output.begin(), output.end(), span.begin(), span.end()) != output.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(expected.size());
}

EvalReport aggregate(const std::map<std::pair<std::string, std::size_t>, double>& cells,
                     std::span<const std::string> tasks, std::span<const std::size_t> lengths) {
  if (tasks.empty() || lengths.empty()) throw std::invalid_argument("aggregation needs tasks and lengths");
  std::string missing;
  for (const auto& t : tasks) {
    for (auto L : lengths) {
      if (!cells.contains({t, L})) missing += (missing.empty() ? "" : ", ") + t + "@" + std::to_string(L);
    }
  }
  if (!missing.empty()) throw std::invalid_argument("missing recall cells: " + missing);
  EvalReport report;
  report.tasks.assign(tasks.begin(), tasks.end());
  report.lengths.assign(lengths.begin(), lengths.end());
  double total = 0.0;
  for (auto L : lengths) {
    double sum = 0.0;
    for (const auto& t : tasks) {
      const double r = cells.at({t, L});
      report.recall[{t, L}] = r;
      sum += r;
    }
    report.per_length[L] = sum / static_cast<double>(tasks.size());
    total += report.per_length[L];
  }
  report.combined = total / static_cast<double>(lengths.size());
  return report;
}

void EvalReport::write_tsv(std::ostream& out) const {
  out << "task";
  for (auto L : lengths) out << '\t' << L;
  out << "\tmean\n" << std::fixed << std::setprecision(4);
  for (const auto& t : tasks) {
    out << t;
    double sum = 0.0;
    for (auto L : lengths) {
      const double r = recall.at({t, L});
      sum += r;
      out << '\t' << r;
    }
    out << '\t' << sum / static_cast<double>(lengths.size()) << '\n';
  }
  out << "mean";
  for (auto L : lengths) out << '\t' << per_length.at(L);
  out << '\t' << combined << '\n';
}

EvalReport run_benchmark(const TinyLm& model, const VocabLayout& vocab, const BenchmarkConfig& config) {
  if (config.samples == 0) throw std::invalid_argument("eval.samples must be positive");
  std::map<std::pair<std::string, std::size_t>, double> cells;
  std::vector<std::string> names;
  for (auto kind : config.tasks) names.push_back(to_string(kind));
  for (std::size_t li = 0; li < config.lengths.size(); ++li) {
    const auto L = config.lengths[li];
    const auto params = TaskParams::desk(L);
    for (auto kind : config.tasks) {
      double sum = 0.0;
      for (std::size_t s = 0; s < config.samples; ++s) {
        const auto seed = derive_seed(config.seed, (li * 16 + kind_index(kind)) * 100003 + s);
        const auto task = gen_eval_task(kind, L, seed, vocab, params);
        sum += score_recall(run_task(model, task, config.context_limit), task.answers);
      }
      cells[{to_string(kind), L}] = sum / static_cast<double>(config.samples);
    }
  }
  return aggregate(cells, names, config.lengths);
}

std::vector<PositionBucket> perplexity_by_position(const TinyLm& model, std::span<const TokenSequence> sequences,
                                                   std::size_t width, std::size_t context_limit) {
  if (width == 0) throw std::invalid_argument("bucket width must be >= 1");
  const auto C = static_cast<std::size_t>(model.config().max_context);
  std::vector<double> nll;
  std::vector<std::size_t> count;
  for (const auto& seq : sequences) {
    const std::size_t limit = context_limit == 0 ? std::min(seq.size(), C) : context_limit;
    const auto trace = forward_logprobs(model, seq, std::max<std::size_t>(limit, 2));
    const std::size_t buckets = (seq.size() + width - 1) / width;
    if (nll.size() < buckets) {
      nll.resize(buckets, 0.0);
      count.resize(buckets, 0);
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
      nll[i / width] -= trace.logp[i];
      ++count[i / width];
    }
  }
  std::vector<PositionBucket> out;
  for (std::size_t b = 0; b < nll.size(); ++b) {
    out.push_back({b * width, (b + 1) * width, count[b],
                   std::exp(nll[b] / static_cast<double>(count[b]))});
  }
  return out;
}

CpmiCheck cpmi_oracle_check(const MarkovOracle& oracle, std::span<const TokenId> sequence, std::size_t i,
                            std::size_t j, std::size_t state_budget) {
  const auto m = static_cast<std::size_t>(oracle.order());
  if (i >= sequence.size()) throw std::invalid_argument("position outside the sequence");
  if (!(j <= m && m <= i)) throw std::invalid_argument("cpmi check needs j <= order <= i");
  if (!oracle.strictly_positive()) {
    throw std::invalid_argument("chain has zero transition probabilities; log-probabilities are not finite");
  }
  const std::size_t older = i - j;
  const auto V = static_cast<std::size_t>(oracle.vocab_size());
  double states = std::pow(static_cast<double>(V), static_cast<double>(older));
  if (states > static_cast<double>(state_budget)) {
    throw ResourceError("enumerating " + std::to_string(V) + "^" + std::to_string(older) +
                        " older contexts exceeds the state budget; reduce V or the order");
  }
  // p(r) and p(y_i, r): sum over every older context a'.
  std::vector<TokenId> buf(sequence.begin(), sequence.begin() + static_cast<std::ptrdiff_t>(i + 1));
  std::vector<std::size_t> digits(older, 0);
  double p_r = 0.0, p_yr = 0.0;
  for (std::size_t s = 0; s < static_cast<std::size_t>(states); ++s) {
    for (std::size_t t = 0; t < older; ++t) buf[t] = static_cast<TokenId>(digits[t]);
    p_r += std::exp(oracle.prefix_log_probability(buf, i));
    p_yr += std::exp(oracle.prefix_log_probability(buf, i + 1));
    for (std::size_t t = older; t-- > 0;) {
      if (++digits[t] < V) break;
      digits[t] = 0;
    }
  }
  const double log_p_ar = oracle.prefix_log_probability(sequence, i);
  const double log_p_yar = oracle.prefix_log_probability(sequence, i + 1);
  CpmiCheck out;
  out.lhs = -(log_p_yar + std::log(p_r) - std::log(p_yr) - log_p_ar);
  out.rhs = std::log(oracle.marginal_conditional(sequence, i, j)) - std::log(oracle.full_conditional(sequence, i));
  return out;
}

KlCheck kl_ordering_check(std::span<const double> pi, std::span<const double> p, std::span<const double> q,
                          double tolerance) {
  if (pi.size() != p.size() || p.size() != q.size() || pi.empty()) {
    throw std::invalid_argument("distributions must share a non-empty support");
  }
  auto check_normalized = [](std::span<const double> d, const char* name) {
    double s = 0.0;
    for (double x : d) {
      if (!(x >= 0.0)) throw std::invalid_argument(std::string(name) + " has a negative entry");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string(name) + " is not normalized");
  };
  check_normalized(pi, "pi");
  check_normalized(p, "p");
  check_normalized(q, "q");
  for (std::size_t x = 0; x < pi.size(); ++x) {
    if (pi[x] > 0.0 && p[x] < q[x]) {
      throw PreconditionError("p < q at outcome " + std::to_string(x) + " on the support of pi");
    }
  }
  KlCheck out;
  for (std::size_t x = 0; x < pi.size(); ++x) {
    if (pi[x] == 0.0) continue;
    const double lp = std::log(p[x]), lq = std::log(q[x]), lpi = std::log(pi[x]);
    out.expected_log_p += pi[x] * lp;
    out.expected_log_q += pi[x] * lq;
    out.kl_p += pi[x] * (lpi - lp);
    out.kl_q += pi[x] * (lpi - lq);
  }
  out.holds = out.expected_log_p >= out.expected_log_q - tolerance && out.kl_p <= out.kl_q + tolerance;
  return out;
}

}  // namespace tokweight
