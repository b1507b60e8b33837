#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokweight/corpus.hpp"
#include "tokweight/tinylm.hpp"

namespace tokweight {

enum class LossPrecision { kFloat64, kFloat32 };

/// Optimizer and schedule settings. Desk-scale defaults; the moment and decay
/// settings follow the AdamW configuration used for continual pretraining.
struct TrainConfig {
  double learning_rate = 2e-3;
  std::size_t warmup_steps = 20;
  std::size_t total_steps = 100;
  std::size_t batch_size = 8;
  std::size_t grad_accum = 1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;
  LossPrecision loss_precision = LossPrecision::kFloat64;

  void validate() const;
};

/// Thrown when a step produces a non-finite loss or gradient.
class NumericAbort : public std::runtime_error {
 public:
  NumericAbort(std::size_t step, std::size_t batch, const std::string& what)
      : std::runtime_error(what), step_(step), batch_(batch) {}
  std::size_t step() const { return step_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t step_;
  std::size_t batch_;
};

/// Decoupled-weight-decay Adam state; moments are kept in double precision.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  std::vector<char> decay_mask;

  static OptimizerState create(const TinyLm& model);
};

/// Learning rate at 1-based step `step`: linear warmup, then constant.
double scheduled_lr(const TrainConfig& config, std::size_t step);

/// Supplies the loss weights of batch element `index` given its full-context
/// forward pass under the step-start parameters. Weights are constants: no
/// gradient flows through them.
using WeightProvider =
    std::function<std::vector<double>(std::size_t index, const ForwardResult<float>& fwd)>;

struct StepResult {
  double loss = 0.0;  // mean over sequences of (weighted NLL / N)
};

/// One optimizer step on the mean per-token weighted NLL of `batch`.
/// `batch_id` is only used in diagnostics.
StepResult train_step(TinyLm& model, OptimizerState& state, std::span<const TokenSequence> batch,
                      const WeightProvider& weights, const TrainConfig& config,
                      std::size_t batch_id = 0);

/// Convenience overload with explicit per-sequence weights.
StepResult train_step(TinyLm& model, OptimizerState& state, std::span<const TokenSequence> batch,
                      std::span<const std::vector<double>> weights, const TrainConfig& config,
                      std::size_t batch_id = 0);

/// Gradient of sum_i w_i * (-log p(y_i)) / N in double precision.
std::vector<double> weighted_nll_gradient(const BasicTinyLm<double>& model,
                                          const TokenSequence& sequence,
                                          std::span<const double> weights);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::size_t> indices;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares analytic gradients against Richardson-extrapolated central finite differences on
/// `samples` random parameters, in double precision. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const TinyLm& model, const TokenSequence& sequence,
                           std::span<const double> weights, std::size_t samples = 64,
                           std::uint64_t seed = 0, double step = 2e-3);

}  // namespace tokweight
