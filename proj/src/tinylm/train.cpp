#include "tokweight/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tokweight/rng.hpp"

namespace tokweight {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (total_steps < 1) throw std::invalid_argument("total steps must be >= 1");
  if (batch_size < 1 || grad_accum < 1) throw std::invalid_argument("batch size and accumulation must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("optimizer betas must be in [0, 1)");
  }
  if (!(eps > 0.0) || weight_decay < 0.0 || grad_clip < 0.0) {
    throw std::invalid_argument("eps must be > 0; weight decay and clip must be >= 0");
  }
}

OptimizerState OptimizerState::create(const TinyLm& model) {
  OptimizerState s;
  s.m.assign(model.param_count(), 0.0);
  s.v.assign(model.param_count(), 0.0);
  s.decay_mask.assign(model.param_count(), 0);
  // Matrices decay; gains, biases and the BOS vector do not.
  for (const auto& r : model.layout().tensors()) {
    if (r.rows > 1 && r.cols > 1) {
      std::fill(s.decay_mask.begin() + static_cast<std::ptrdiff_t>(r.offset),
                s.decay_mask.begin() + static_cast<std::ptrdiff_t>(r.offset + r.size()), 1);
    }
  }
  return s;
}

double scheduled_lr(const TrainConfig& config, std::size_t step) {
  if (config.warmup_steps > 0 && step <= config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  return config.learning_rate;
}

namespace {

void adamw_update(TinyLm& model, OptimizerState& state, std::span<const double> grad,
                  const TrainConfig& config) {
  state.step += 1;
  const double lr = scheduled_lr(config, state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  double clip = 1.0;
  if (config.grad_clip > 0.0) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config.grad_clip) clip = config.grad_clip / norm;
  }
  auto& p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grad[i] * clip;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    double w = static_cast<double>(p[i]);
    if (state.decay_mask[i]) w -= lr * config.weight_decay * w;
    w -= lr * mhat / (std::sqrt(vhat) + config.eps);
    p[i] = static_cast<float>(w);
  }
}

}  // namespace

StepResult train_step(TinyLm& model, OptimizerState& state, std::span<const TokenSequence> batch,
                      const WeightProvider& weights, const TrainConfig& config,
                      std::size_t batch_id) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  if (state.m.size() != model.param_count()) throw std::invalid_argument("optimizer state does not match model");
  const std::size_t step = state.step + 1;
  std::vector<double> total_grad(model.param_count(), 0.0);
  std::vector<float> seq_grad(model.param_count());
  double loss = 0.0;
  float loss_f = 0.0f;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  // Every forward pass uses the step-start parameters; the model is only
  // written by adamw_update below.
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    const auto fwd = model.forward(seq.ids, true);
    const std::vector<double> w = weights(b, fwd);
    if (w.size() != seq.size()) {
      throw std::invalid_argument("weight vector length " + std::to_string(w.size()) +
                                  " != sequence length " + std::to_string(seq.size()));
    }
    const double inv_n = 1.0 / static_cast<double>(seq.size());
    std::vector<double> coeff(seq.size());
    double seq_loss = 0.0;
    float seq_loss_f = 0.0f;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (!(w[i] >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
      coeff[i] = w[i] * inv_n * inv_batch;
      seq_loss -= w[i] * fwd.target_logp[i];
      seq_loss_f -= static_cast<float>(w[i]) * static_cast<float>(fwd.target_logp[i]);
    }
    loss += seq_loss * inv_n * inv_batch;
    loss_f += seq_loss_f * static_cast<float>(inv_n * inv_batch);
    std::fill(seq_grad.begin(), seq_grad.end(), 0.0f);
    model.backward(fwd, coeff, seq_grad);
    for (std::size_t i = 0; i < total_grad.size(); ++i) total_grad[i] += seq_grad[i];
  }
  if (config.loss_precision == LossPrecision::kFloat32) loss = loss_f;
  if (!std::isfinite(loss)) {
    throw NumericAbort(step, batch_id, "non-finite loss at step " + std::to_string(step) +
                                           ", batch " + std::to_string(batch_id));
  }
  for (double g : total_grad) {
    if (!std::isfinite(g)) {
      throw NumericAbort(step, batch_id, "non-finite gradient at step " + std::to_string(step) +
                                             ", batch " + std::to_string(batch_id));
    }
  }
  adamw_update(model, state, total_grad, config);
  return StepResult{loss};
}

StepResult train_step(TinyLm& model, OptimizerState& state, std::span<const TokenSequence> batch,
                      std::span<const std::vector<double>> weights, const TrainConfig& config,
                      std::size_t batch_id) {
  if (weights.size() != batch.size()) throw std::invalid_argument("one weight vector per sequence required");
  return train_step(
      model, state, batch,
      [&](std::size_t index, const ForwardResult<float>&) { return weights[index]; }, config,
      batch_id);
}

namespace {

double weighted_loss(const BasicTinyLm<double>& model, const TokenSequence& sequence,
                     std::span<const double> weights) {
  const auto fwd = model.forward(sequence.ids);
  double loss = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) loss -= weights[i] * fwd.target_logp[i];
  return loss / static_cast<double>(sequence.size());
}

}  // namespace

std::vector<double> weighted_nll_gradient(const BasicTinyLm<double>& model,
                                          const TokenSequence& sequence,
                                          std::span<const double> weights) {
  if (weights.size() != sequence.size()) throw std::invalid_argument("weight count != sequence length");
  const auto fwd = model.forward(sequence.ids, true);
  std::vector<double> coeff(weights.begin(), weights.end());
  for (auto& c : coeff) c /= static_cast<double>(sequence.size());
  std::vector<double> grad(model.param_count(), 0.0);
  model.backward(fwd, coeff, grad);
  return grad;
}

GradCheckReport grad_check(const TinyLm& model, const TokenSequence& sequence,
                           std::span<const double> weights, std::size_t samples,
                           std::uint64_t seed, double step) {
  auto probe = model.cast<double>();
  const auto analytic = weighted_nll_gradient(probe, sequence, weights);
  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t idx = rng.below(probe.param_count());
    const double saved = probe.params()[idx];
    auto loss_at = [&](double offset) {
      probe.params()[idx] = saved + offset;
      return weighted_loss(probe, sequence, weights);
    };
    auto stencil = [&](double h) {
      return (8.0 * (loss_at(h) - loss_at(-h)) - (loss_at(2.0 * h) - loss_at(-2.0 * h))) / (12.0 * h);
    };
    // Fourth-order central stencil with one Richardson step: a larger step
    // keeps roundoff small on tiny gradients without paying in truncation.
    const double numeric = (16.0 * stencil(0.5 * step) - stencil(step)) / 15.0;
    probe.params()[idx] = saved;
    const double a = analytic[idx];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    report.max_rel_error = std::max(report.max_rel_error, rel);
    report.indices.push_back(idx);
    report.analytic.push_back(a);
    report.numeric.push_back(numeric);
  }
  return report;
}

}  // namespace tokweight
