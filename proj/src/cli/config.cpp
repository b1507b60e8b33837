#include "tokweight/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "tokweight/generators.hpp"
#include "tokweight/markov.hpp"
#include "tokweight/rng.hpp"

namespace tokweight {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"seed", "0"},
      {"out", "runs"},
      {"corpus.kind", "mixed"},
      {"corpus.file", ""},
      {"corpus.seed", "0"},
      {"corpus.vocab", "128"},
      {"corpus.length", "256"},
      {"corpus.count", "64"},
      {"corpus.distance_min", "80"},
      {"corpus.distance_max", "200"},
      {"corpus.entity_gap", "100"},
      {"corpus.entity_jitter", "8"},
      {"corpus.entity_pool", "64"},
      {"corpus.markov_order", "2"},
      {"model.layers", "2"},
      {"model.dim", "64"},
      {"model.heads", "4"},
      {"model.ff_dim", "256"},
      {"model.context", "256"},
      {"model.rope_base", "10000"},
      {"model.init", ""},
      {"model.extend_context", "0"},
      {"model.rope_factor", "16"},
      {"train.lr", "0.002"},
      {"train.warmup", "20"},
      {"train.steps", "100"},
      {"train.batch", "8"},
      {"train.grad_accum", "1"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.95"},
      {"train.eps", "1e-8"},
      {"train.weight_decay", "0.01"},
      {"train.grad_clip", "1.0"},
      {"train.loss_precision", "float64"},
      {"scorer.mode", "unfrozen"},
      {"scorer.reference", ""},
      {"scorer.function", "abs"},
      {"scorer.shift", "2"},
      {"scorer.postprocess", "uniform"},
      {"scorer.kappa", "0.2"},
      {"scorer.lambda", "0.75"},
      {"scorer.short_context", "64"},
      {"scorer.overlap", "0"},
      {"scorer.cache", ""},
      {"scorer.rescore", "true"},
      {"eval.lengths", "64,128,192,256"},
      {"eval.samples", "10"},
      {"eval.context_limit", "0"},
      {"eval.checkpoint", ""},
      {"dump.seq_id", "0"},
      {"dump.checkpoint", ""},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<CorpusRecord> from_documents(const std::vector<Document>& docs) {
  std::vector<CorpusRecord> out;
  for (const auto& d : docs) {
    CorpusRecord r;
    r.ids = d.ids;
    if (!d.answers.empty()) r.answers.push_back(d.answers);
    r.marked = d.marked;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CorpusRecord> passkey_records(const CorpusSpec& spec, const VocabLayout& vocab, std::size_t count) {
  if (spec.distance_min > spec.distance_max) {
    throw ConfigError("corpus.distance_min", "must not exceed corpus.distance_max");
  }
  std::vector<CorpusRecord> out;
  Rng rng(derive_seed(spec.seed, 0x9a55ULL));
  for (std::size_t d = 0; d < count; ++d) {
    PasskeyConfig pc;
    pc.length = spec.length;
    pc.distance = spec.distance_min + rng.below(spec.distance_max - spec.distance_min + 1);
    pc.count = 1;
    pc.seed = derive_seed(spec.seed, d);
    auto recs = from_documents(gen_passkey_corpus(pc, vocab));
    out.push_back(std::move(recs.front()));
  }
  return out;
}

std::vector<CorpusRecord> entity_records(const CorpusSpec& spec, const VocabLayout& vocab, std::size_t count) {
  EntityConfig ec;
  ec.length = spec.length;
  ec.entity_pool = spec.entity_pool;
  ec.gap = spec.entity_gap;
  ec.jitter = spec.entity_jitter;
  ec.count = count;
  ec.seed = derive_seed(spec.seed, 0xe7ULL);
  return from_documents(gen_entity_recurrence_corpus(ec, vocab));
}

}  // namespace

std::vector<CorpusRecord> build_corpus(const CorpusSpec& spec) {
  std::vector<CorpusRecord> out;
  if (spec.kind == "markov") {
    auto mc = gen_markov_corpus(spec.markov_order, spec.vocab, spec.count, spec.length, spec.seed);
    for (auto& d : mc.documents) out.push_back(CorpusRecord{0, std::move(d), {}, {}, ""});
  } else {
    const auto vocab = VocabLayout::make(spec.vocab);
    if (spec.kind == "passkey") {
      out = passkey_records(spec, vocab, spec.count);
    } else if (spec.kind == "entity") {
      out = entity_records(spec, vocab, spec.count);
    } else if (spec.kind == "mixed") {
      auto pk = passkey_records(spec, vocab, (spec.count + 1) / 2);
      auto en = entity_records(spec, vocab, spec.count / 2);
      for (std::size_t k = 0; k < pk.size(); ++k) {
        out.push_back(std::move(pk[k]));
        if (k < en.size()) out.push_back(std::move(en[k]));
      }
    } else {
      throw ConfigError("corpus.kind", "unknown corpus kind '" + spec.kind + "'");
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].seq_id = k;
  return out;
}

std::vector<TokenSequence> to_sequences(std::span<const CorpusRecord> records) {
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(TokenSequence{r.seq_id, r.ids});
  return out;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected `key = value`");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  return parse(in);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.contains(key)) throw ConfigError(key, "unknown configuration key");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown configuration key");
  return it->second;
}

std::string RunConfig::text() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key, "expected a nonnegative integer, got '" + s + "'");
  return v;
}

int RunConfig::i32(const std::string& key) const {
  const auto& s = get(key);
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key, "expected an integer, got '" + s + "'");
  return v;
}

double RunConfig::f64(const std::string& key) const {
  const auto& s = get(key);
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key, "expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + s + "'");
}

std::vector<std::size_t> RunConfig::size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size() || v == 0) {
      throw ConfigError(key, "expected a comma-separated list of positive integers");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key, "list is empty");
  return out;
}

std::uint64_t RunConfig::seed() const { return u64("seed"); }

std::filesystem::path RunConfig::out() const { return str("out"); }

CorpusSpec RunConfig::corpus() const {
  CorpusSpec c;
  c.kind = str("corpus.kind");
  c.vocab = i32("corpus.vocab");
  c.length = size("corpus.length");
  c.count = size("corpus.count");
  c.seed = u64("corpus.seed");
  c.distance_min = size("corpus.distance_min");
  c.distance_max = size("corpus.distance_max");
  c.entity_gap = size("corpus.entity_gap");
  c.entity_jitter = size("corpus.entity_jitter");
  c.entity_pool = size("corpus.entity_pool");
  c.markov_order = i32("corpus.markov_order");
  return c;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.layers = i32("model.layers");
  m.dim = i32("model.dim");
  m.heads = i32("model.heads");
  m.ff_dim = i32("model.ff_dim");
  m.vocab = i32("corpus.vocab");
  m.max_context = i32("model.context");
  m.rope_base = f64("model.rope_base");
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.learning_rate = f64("train.lr");
  t.warmup_steps = size("train.warmup");
  t.total_steps = size("train.steps");
  t.batch_size = size("train.batch");
  t.grad_accum = size("train.grad_accum");
  t.beta1 = f64("train.beta1");
  t.beta2 = f64("train.beta2");
  t.eps = f64("train.eps");
  t.weight_decay = f64("train.weight_decay");
  t.grad_clip = f64("train.grad_clip");
  t.seed = seed();
  const auto& p = str("train.loss_precision");
  if (p == "float64") {
    t.loss_precision = LossPrecision::kFloat64;
  } else if (p == "float32") {
    t.loss_precision = LossPrecision::kFloat32;
  } else {
    throw ConfigError("train.loss_precision", "expected float64 or float32");
  }
  return t;
}

ScorerSpec RunConfig::scorer() const {
  ScorerSpec s;
  try {
    s.mode = parse_scorer_mode(str("scorer.mode"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("scorer.mode", e.what());
  }
  s.reference = str("scorer.reference");
  try {
    s.function = parse_score_function(str("scorer.function"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("scorer.function", e.what());
  }
  s.shift = i32("scorer.shift");
  const auto& pp = str("scorer.postprocess");
  if (pp == "uniform") {
    s.postprocess = PostprocessTag::uniform();
  } else if (pp == "sparse") {
    s.postprocess = PostprocessTag::sparse(f64("scorer.kappa"), seed());
  } else if (pp == "dense") {
    s.postprocess = PostprocessTag::dense(f64("scorer.lambda"));
  } else {
    throw ConfigError("scorer.postprocess", "expected uniform, sparse or dense");
  }
  s.short_context = size("scorer.short_context");
  s.overlap = size("scorer.overlap");
  return s;
}

BenchmarkConfig RunConfig::eval() const {
  BenchmarkConfig b;
  b.lengths = size_list("eval.lengths");
  b.samples = size("eval.samples");
  b.seed = seed();
  b.context_limit = size("eval.context_limit");
  return b;
}

void RunConfig::validate() const {
  seed();
  const auto c = corpus();
  if (c.kind != "passkey" && c.kind != "entity" && c.kind != "mixed" && c.kind != "markov") {
    throw ConfigError("corpus.kind", "expected passkey, entity, mixed or markov");
  }
  if (c.count == 0) throw ConfigError("corpus.count", "must be positive");
  if (c.length < 2) throw ConfigError("corpus.length", "must be at least 2");
  if (c.distance_min > c.distance_max) {
    throw ConfigError("corpus.distance_min", "must not exceed corpus.distance_max");
  }
  auto wrap = [](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field, e.what());
    }
  };
  wrap("model", [&] { model().validate(); });
  wrap("train", [&] { train().validate(); });
  const auto extend = size("model.extend_context");
  const auto long_context = extend ? extend : size("model.context");
  if (c.length > long_context) {
    throw ConfigError("corpus.length", "sequences longer than the model context (" + std::to_string(long_context) + ")");
  }
  if (extend && !(f64("model.rope_factor") > 1.0)) throw ConfigError("model.rope_factor", "must exceed 1");
  const auto s = scorer();
  wrap("scorer", [&] { s.validate(long_context); });
  const auto e = eval();
  if (e.samples == 0) throw ConfigError("eval.samples", "must be positive");
  for (const char* key : {"corpus.file", "model.init", "scorer.reference", "eval.checkpoint", "dump.checkpoint"}) {
    const auto& path = get(key);
    if (!path.empty() && !std::filesystem::exists(path)) throw ConfigError(key, "file not found: " + path);
  }
  flag("scorer.rescore");
  size("dump.seq_id");
}

}  // namespace tokweight
