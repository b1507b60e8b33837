#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"

namespace tokweight {

struct ModelConfig {
  int layers = 2;
  int dim = 64;
  int heads = 4;
  int ff_dim = 256;
  int vocab = 128;
  int max_context = 64;
  double rope_base = 10000.0;

  /// Throws std::invalid_argument on non-positive sizes, dim % heads != 0,
  /// odd head dimension, max_context < 2 or rope_base <= 0.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// A named slice of the flat parameter vector, rows x cols, row-major.
struct ParamRef {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

struct LayerParams {
  ParamRef ln1_gain, ln1_bias;
  ParamRef wq, wk, wv, wo;  // [dim x dim], applied as x * W^T
  ParamRef ln2_gain, ln2_bias;
  ParamRef w1, b1;  // [ff x dim], [1 x ff]
  ParamRef w2, b2;  // [dim x ff], [1 x dim]
};

/// Declaration order of every tensor; checkpoints serialize in this order.
struct ParamLayout {
  ParamRef token_embedding;  // [vocab x dim]
  ParamRef bos;              // [1 x dim]
  std::vector<LayerParams> layers;
  ParamRef lnf_gain, lnf_bias;
  ParamRef head;  // [vocab x dim]
  std::size_t total = 0;

  static ParamLayout make(const ModelConfig& config);
  std::vector<ParamRef> tensors() const;
};

template <class Real>
struct Activations;

/// Output of one forward pass over T tokens: row t of log_probs is the
/// log-distribution over the vocabulary for token t given the BOS embedding
/// and tokens [0, t).
template <class Real>
struct ForwardResult {
  std::size_t length = 0;
  std::size_t vocab = 0;
  std::vector<Real> log_probs;      // length x vocab
  std::vector<double> target_logp;  // log p(tokens[t] | ...)
  std::shared_ptr<const Activations<Real>> activations;

  std::span<const Real> row(std::size_t t) const {
    return std::span<const Real>(log_probs).subspan(t * vocab, vocab);
  }
};

/// Small pre-norm decoder-only transformer with rotary position embeddings.
/// Parameters live in one flat vector so optimizers and gradient checks can
/// treat them uniformly.
template <class Real>
class BasicTinyLm {
 public:
  explicit BasicTinyLm(const ModelConfig& config);

  /// Deterministic initialization under `seed`.
  static BasicTinyLm init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<Real>& params() { return params_; }
  const std::vector<Real>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  template <class Other>
  BasicTinyLm<Other> cast() const {
    BasicTinyLm<Other> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<Other>(params_[i]);
    return out;
  }

  /// Same parameters under a different context size and rotary base.
  BasicTinyLm with_context(int max_context, double rope_base) const;

  /// Requires 1 <= tokens.size() <= max_context.
  ForwardResult<Real> forward(std::span<const TokenId> tokens, bool keep_activations = false) const;

  /// Accumulates into `grad` the gradient of sum_t coeff[t] * (-log p(tokens[t])).
  /// `fwd` must come from forward(..., true) on the same parameters.
  void backward(const ForwardResult<Real>& fwd, std::span<const double> coeff,
                std::span<Real> grad) const;

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<Real> params_;
};

using TinyLm = BasicTinyLm<float>;

/// Per-token log-probabilities of one sequence under one context regime.
struct LogProbTrace {
  std::uint64_t seq_id = 0;
  std::size_t context_limit = 0;
  std::vector<double> logp;

  std::size_t size() const { return logp.size(); }
};

/// Default unfolding overlap for a context limit: a quarter of the window,
/// at least one token.
std::size_t default_overlap(std::size_t context_limit);

/// log p(y_i | admissible context). When context_limit >= N the full prefix
/// is used (N must fit the model context); otherwise the sequence is unfolded
/// with plan_windows(N, context_limit, overlap). overlap == 0 selects
/// default_overlap(context_limit).
template <class Real>
LogProbTrace forward_logprobs(const BasicTinyLm<Real>& model, const TokenSequence& sequence,
                              std::size_t context_limit, std::size_t overlap = 0);

/// Returns a model with max_context = new_context and rope_base scaled by
/// rope_factor; parameters are copied unchanged. Requires new_context >
/// max_context and rope_factor > 1.
TinyLm extend_context(const TinyLm& model, int new_context, double rope_factor);

/// Weighted negative log-likelihood -sum_i w_i * logp_i, accumulated in double.
double weighted_nll(const LogProbTrace& trace, std::span<const double> weights);

}  // namespace tokweight
