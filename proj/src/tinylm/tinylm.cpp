#include "tokweight/tinylm.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tokweight/rng.hpp"
#include "tokweight/window_plan.hpp"

namespace tokweight {

namespace {

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using ConstMap = Eigen::Map<const Mat<Real>>;
template <class Real>
using MutMap = Eigen::Map<Mat<Real>>;

constexpr double kLayerNormEps = 1e-5;

template <class Real>
ConstMap<Real> view(const std::vector<Real>& p, const ParamRef& r) {
  return ConstMap<Real>(p.data() + r.offset, static_cast<Eigen::Index>(r.rows),
                        static_cast<Eigen::Index>(r.cols));
}

// Gradient slices are only ever updated with `+= <evaluated temporary>`: a
// lazily evaluated product or reduction would pick its summation order from
// the destination's address, which breaks run-to-run reproducibility.
template <class Real>
MutMap<Real> view(std::span<Real> g, const ParamRef& r) {
  return MutMap<Real>(g.data() + r.offset, static_cast<Eigen::Index>(r.rows),
                      static_cast<Eigen::Index>(r.cols));
}

template <class Real>
void layer_norm_forward(const Mat<Real>& x, const ConstMap<Real>& gain, const ConstMap<Real>& bias,
                        Mat<Real>& out, Mat<Real>& xhat, std::vector<Real>& rstd) {
  const auto T = x.rows(), D = x.cols();
  out.resize(T, D);
  xhat.resize(T, D);
  rstd.resize(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    const Real mean = x.row(t).mean();
    const Real var = (x.row(t).array() - mean).square().mean();
    const Real r = Real(1) / std::sqrt(var + Real(kLayerNormEps));
    rstd[static_cast<std::size_t>(t)] = r;
    xhat.row(t) = (x.row(t).array() - mean) * r;
    out.row(t) = xhat.row(t).cwiseProduct(gain.row(0)) + bias.row(0);
  }
}

/// dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), dxhat = dy * gain.
template <class Real>
Mat<Real> layer_norm_backward(const Mat<Real>& dy, const Mat<Real>& xhat,
                              const std::vector<Real>& rstd, const ConstMap<Real>& gain,
                              MutMap<Real> dgain, MutMap<Real> dbias) {
  const auto T = dy.rows(), D = dy.cols();
  dgain.row(0) += dy.cwiseProduct(xhat).colwise().sum().eval();
  dbias.row(0) += dy.colwise().sum().eval();
  Mat<Real> dx(T, D);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto dxhat = dy.row(t).cwiseProduct(gain.row(0)).eval();
    const Real m1 = dxhat.mean();
    const Real m2 = dxhat.cwiseProduct(xhat.row(t)).mean();
    dx.row(t) = (dxhat.array() - m1 - xhat.row(t).array() * m2) * rstd[static_cast<std::size_t>(t)];
  }
  return dx;
}

template <class Real>
struct RopeTable {
  std::vector<Real> cos, sin;  // T x (head_dim / 2)
  std::size_t half = 0;

  RopeTable(std::size_t length, int head_dim, double base) : half(static_cast<std::size_t>(head_dim) / 2) {
    cos.resize(length * half);
    sin.resize(length * half);
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / head_dim);
      for (std::size_t t = 0; t < length; ++t) {
        const double angle = static_cast<double>(t) * freq;
        cos[t * half + i] = static_cast<Real>(std::cos(angle));
        sin[t * half + i] = static_cast<Real>(std::sin(angle));
      }
    }
  }

  /// Rotates each (2i, 2i+1) pair of every head by +angle (sign = 1) or -angle (sign = -1).
  void apply(Mat<Real>& m, int heads, int head_dim, Real sign) const {
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      const Real* c = cos.data() + static_cast<std::size_t>(t) * half;
      const Real* s = sin.data() + static_cast<std::size_t>(t) * half;
      for (int h = 0; h < heads; ++h) {
        Real* v = m.row(t).data() + static_cast<std::ptrdiff_t>(h) * head_dim;
        for (std::size_t i = 0; i < half; ++i) {
          const Real a = v[2 * i], b = v[2 * i + 1];
          const Real si = sign * s[i];
          v[2 * i] = a * c[i] - b * si;
          v[2 * i + 1] = a * si + b * c[i];
        }
      }
    }
  }
};

template <class Real>
Real gelu(Real u) {
  constexpr Real k = Real(0.7978845608028654);  // sqrt(2/pi)
  return Real(0.5) * u * (Real(1) + std::tanh(k * (u + Real(0.044715) * u * u * u)));
}

template <class Real>
Real gelu_grad(Real u) {
  constexpr Real k = Real(0.7978845608028654);
  const Real th = std::tanh(k * (u + Real(0.044715) * u * u * u));
  return Real(0.5) * (Real(1) + th) +
         Real(0.5) * u * (Real(1) - th * th) * k * (Real(1) + Real(3 * 0.044715) * u * u);
}

}  // namespace

template <class Real>
struct LayerActivations {
  Mat<Real> ln1, xhat1;
  std::vector<Real> rstd1;
  Mat<Real> q, k, v;               // q and k after rotation
  std::vector<Mat<Real>> probs;    // per head, T x T (zero above the diagonal)
  Mat<Real> att;
  Mat<Real> ln2, xhat2;
  std::vector<Real> rstd2;
  Mat<Real> pre_act, act;
};

template <class Real>
struct Activations {
  std::vector<TokenId> tokens;
  std::vector<LayerActivations<Real>> layers;
  Mat<Real> lnf, xhatf;
  std::vector<Real> rstdf;
};

void ModelConfig::validate() const {
  if (layers < 1 || dim < 2 || heads < 1 || ff_dim < 1 || vocab < 2) {
    throw std::invalid_argument("model sizes must be positive (vocab >= 2)");
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("model dim " + std::to_string(dim) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if ((dim / heads) % 2 != 0) throw std::invalid_argument("rotary embeddings need an even head dim");
  if (max_context < 2) throw std::invalid_argument("max context must be >= 2");
  if (!(rope_base > 0.0) || !std::isfinite(rope_base)) {
    throw std::invalid_argument("rotary base must be positive and finite");
  }
}

ParamLayout ParamLayout::make(const ModelConfig& c) {
  c.validate();
  ParamLayout l;
  std::size_t off = 0;
  auto take = [&](std::size_t rows, std::size_t cols) {
    ParamRef r{off, rows, cols};
    off += rows * cols;
    return r;
  };
  const auto d = static_cast<std::size_t>(c.dim), f = static_cast<std::size_t>(c.ff_dim),
             v = static_cast<std::size_t>(c.vocab);
  l.token_embedding = take(v, d);
  l.bos = take(1, d);
  for (int i = 0; i < c.layers; ++i) {
    LayerParams p;
    p.ln1_gain = take(1, d);
    p.ln1_bias = take(1, d);
    p.wq = take(d, d);
    p.wk = take(d, d);
    p.wv = take(d, d);
    p.wo = take(d, d);
    p.ln2_gain = take(1, d);
    p.ln2_bias = take(1, d);
    p.w1 = take(f, d);
    p.b1 = take(1, f);
    p.w2 = take(d, f);
    p.b2 = take(1, d);
    l.layers.push_back(p);
  }
  l.lnf_gain = take(1, d);
  l.lnf_bias = take(1, d);
  l.head = take(v, d);
  l.total = off;
  return l;
}

std::vector<ParamRef> ParamLayout::tensors() const {
  std::vector<ParamRef> out{token_embedding, bos};
  for (const auto& p : layers) {
    out.insert(out.end(), {p.ln1_gain, p.ln1_bias, p.wq, p.wk, p.wv, p.wo, p.ln2_gain, p.ln2_bias,
                           p.w1, p.b1, p.w2, p.b2});
  }
  out.insert(out.end(), {lnf_gain, lnf_bias, head});
  return out;
}

template <class Real>
BasicTinyLm<Real>::BasicTinyLm(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::make(config)), params_(layout_.total, Real(0)) {}

template <class Real>
BasicTinyLm<Real> BasicTinyLm<Real>::init(const ModelConfig& config, std::uint64_t seed) {
  BasicTinyLm m(config);
  Rng rng(seed);
  auto fill_normal = [&](const ParamRef& r, double stddev) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      m.params_[r.offset + i] = static_cast<Real>(stddev * rng.normal());
    }
  };
  auto fill_const = [&](const ParamRef& r, Real value) {
    for (std::size_t i = 0; i < r.size(); ++i) m.params_[r.offset + i] = value;
  };
  const double d = config.dim, f = config.ff_dim;
  const double residual_scale = 1.0 / std::sqrt(2.0 * config.layers);
  fill_normal(m.layout_.token_embedding, 0.02);
  fill_normal(m.layout_.bos, 0.02);
  for (const auto& p : m.layout_.layers) {
    fill_const(p.ln1_gain, Real(1));
    fill_normal(p.wq, 1.0 / std::sqrt(d));
    fill_normal(p.wk, 1.0 / std::sqrt(d));
    fill_normal(p.wv, 1.0 / std::sqrt(d));
    fill_normal(p.wo, residual_scale / std::sqrt(d));
    fill_const(p.ln2_gain, Real(1));
    fill_normal(p.w1, 1.0 / std::sqrt(d));
    fill_normal(p.w2, residual_scale / std::sqrt(f));
  }
  fill_const(m.layout_.lnf_gain, Real(1));
  fill_normal(m.layout_.head, 0.02);
  return m;
}

template <class Real>
BasicTinyLm<Real> BasicTinyLm<Real>::with_context(int max_context, double rope_base) const {
  ModelConfig c = config_;
  c.max_context = max_context;
  c.rope_base = rope_base;
  BasicTinyLm out(c);
  out.params_ = params_;
  return out;
}

template <class Real>
ForwardResult<Real> BasicTinyLm<Real>::forward(std::span<const TokenId> tokens,
                                               bool keep_activations) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  if (T < 1 || T > config_.max_context) {
    throw std::invalid_argument("forward length " + std::to_string(T) + " outside [1, " +
                                std::to_string(config_.max_context) + "]");
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config_.vocab) throw std::invalid_argument("token outside model vocabulary");
  }
  const int D = config_.dim, H = config_.heads, hd = D / H, V = config_.vocab;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
  const RopeTable<Real> rope(static_cast<std::size_t>(T), hd, config_.rope_base);

  auto acts = std::make_shared<Activations<Real>>();
  acts->tokens.assign(tokens.begin(), tokens.end());
  acts->layers.resize(layout_.layers.size());

  const auto emb = view(params_, layout_.token_embedding);
  Mat<Real> x(T, D);
  x.row(0) = view(params_, layout_.bos).row(0);
  for (Eigen::Index t = 1; t < T; ++t) x.row(t) = emb.row(tokens[static_cast<std::size_t>(t - 1)]);

  for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
    const auto& p = layout_.layers[l];
    auto& a = acts->layers[l];
    layer_norm_forward<Real>(x, view(params_, p.ln1_gain), view(params_, p.ln1_bias), a.ln1, a.xhat1,
                             a.rstd1);
    a.q = a.ln1 * view(params_, p.wq).transpose();
    a.k = a.ln1 * view(params_, p.wk).transpose();
    a.v = a.ln1 * view(params_, p.wv).transpose();
    rope.apply(a.q, H, hd, Real(1));
    rope.apply(a.k, H, hd, Real(1));
    a.att.setZero(T, D);
    a.probs.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      Mat<Real> s = (a.q.middleCols(h * hd, hd) * a.k.middleCols(h * hd, hd).transpose()) * scale;
      for (Eigen::Index t = 0; t < T; ++t) {
        const Real mx = s.row(t).head(t + 1).maxCoeff();
        s.row(t).head(t + 1) = (s.row(t).head(t + 1).array() - mx).exp();
        s.row(t).head(t + 1) /= s.row(t).head(t + 1).sum();
        if (t + 1 < T) s.row(t).tail(T - t - 1).setZero();
      }
      a.att.middleCols(h * hd, hd).noalias() = s * a.v.middleCols(h * hd, hd);
      a.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    x.noalias() += a.att * view(params_, p.wo).transpose();

    layer_norm_forward<Real>(x, view(params_, p.ln2_gain), view(params_, p.ln2_bias), a.ln2, a.xhat2,
                             a.rstd2);
    a.pre_act = a.ln2 * view(params_, p.w1).transpose();
    a.pre_act.rowwise() += view(params_, p.b1).row(0);
    a.act = a.pre_act.unaryExpr([](Real u) { return gelu(u); });
    x.noalias() += a.act * view(params_, p.w2).transpose();
    x.rowwise() += view(params_, p.b2).row(0);
  }

  layer_norm_forward<Real>(x, view(params_, layout_.lnf_gain), view(params_, layout_.lnf_bias),
                           acts->lnf, acts->xhatf, acts->rstdf);
  Mat<Real> logits = acts->lnf * view(params_, layout_.head).transpose();

  ForwardResult<Real> out;
  out.length = static_cast<std::size_t>(T);
  out.vocab = static_cast<std::size_t>(V);
  out.log_probs.resize(out.length * out.vocab);
  out.target_logp.resize(out.length);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Real mx = logits.row(t).maxCoeff();
    const Real lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    Real* dst = out.log_probs.data() + static_cast<std::size_t>(t) * out.vocab;
    for (int v = 0; v < V; ++v) dst[v] = logits(t, v) - lse;
    out.target_logp[static_cast<std::size_t>(t)] = static_cast<double>(dst[tokens[static_cast<std::size_t>(t)]]);
  }
  if (keep_activations) out.activations = std::move(acts);
  return out;
}

template <class Real>
void BasicTinyLm<Real>::backward(const ForwardResult<Real>& fwd, std::span<const double> coeff,
                                 std::span<Real> grad) const {
  if (!fwd.activations) throw std::invalid_argument("backward needs a forward pass with activations");
  if (coeff.size() != fwd.length) throw std::invalid_argument("coefficient count != sequence length");
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer has wrong size");
  const auto& acts = *fwd.activations;
  const auto T = static_cast<Eigen::Index>(fwd.length);
  const int D = config_.dim, H = config_.heads, hd = D / H, V = config_.vocab;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
  const RopeTable<Real> rope(fwd.length, hd, config_.rope_base);

  // d(-c_t log softmax_t[y_t]) / dlogits_t = c_t * (softmax_t - onehot(y_t))
  Mat<Real> dlogits(T, V);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Real c = static_cast<Real>(coeff[static_cast<std::size_t>(t)]);
    const Real* lp = fwd.log_probs.data() + static_cast<std::size_t>(t) * fwd.vocab;
    for (int v = 0; v < V; ++v) dlogits(t, v) = c * std::exp(lp[v]);
    dlogits(t, acts.tokens[static_cast<std::size_t>(t)]) -= c;
  }
  const auto head = view(params_, layout_.head);
  view(grad, layout_.head) += (dlogits.transpose() * acts.lnf).eval();
  Mat<Real> dx = layer_norm_backward<Real>(dlogits * head, acts.xhatf, acts.rstdf,
                                           view(params_, layout_.lnf_gain),
                                           view(grad, layout_.lnf_gain), view(grad, layout_.lnf_bias));

  for (std::size_t l = layout_.layers.size(); l-- > 0;) {
    const auto& p = layout_.layers[l];
    const auto& a = acts.layers[l];

    // MLP block: x += gelu(ln2 W1^T + b1) W2^T + b2
    view(grad, p.w2) += (dx.transpose() * a.act).eval();
    view(grad, p.b2).row(0) += dx.colwise().sum().eval();
    Mat<Real> dpre = dx * view(params_, p.w2);
    for (Eigen::Index i = 0; i < dpre.size(); ++i) dpre.data()[i] *= gelu_grad(a.pre_act.data()[i]);
    view(grad, p.w1) += (dpre.transpose() * a.ln2).eval();
    view(grad, p.b1).row(0) += dpre.colwise().sum().eval();
    dx += layer_norm_backward<Real>(dpre * view(params_, p.w1), a.xhat2, a.rstd2,
                                    view(params_, p.ln2_gain), view(grad, p.ln2_gain),
                                    view(grad, p.ln2_bias));

    // Attention block: x += att Wo^T
    view(grad, p.wo) += (dx.transpose() * a.att).eval();
    const Mat<Real> datt = dx * view(params_, p.wo);
    Mat<Real> dq(T, D), dk(T, D), dv(T, D);
    for (int h = 0; h < H; ++h) {
      const auto& probs = a.probs[static_cast<std::size_t>(h)];
      const auto datt_h = datt.middleCols(h * hd, hd);
      Mat<Real> dprobs = datt_h * a.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() = probs.transpose() * datt_h;
      // softmax backward; masked entries have probs == 0 and stay zero
      const auto row_dot = probs.cwiseProduct(dprobs).rowwise().sum().eval();
      Mat<Real> ds = probs.cwiseProduct((dprobs.colwise() - row_dot)) * scale;
      dq.middleCols(h * hd, hd).noalias() = ds * a.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() = ds.transpose() * a.q.middleCols(h * hd, hd);
    }
    rope.apply(dq, H, hd, Real(-1));
    rope.apply(dk, H, hd, Real(-1));
    view(grad, p.wq) += (dq.transpose() * a.ln1).eval();
    view(grad, p.wk) += (dk.transpose() * a.ln1).eval();
    view(grad, p.wv) += (dv.transpose() * a.ln1).eval();
    Mat<Real> dln1 = dq * view(params_, p.wq);
    dln1.noalias() += dk * view(params_, p.wk);
    dln1.noalias() += dv * view(params_, p.wv);
    dx += layer_norm_backward<Real>(dln1, a.xhat1, a.rstd1, view(params_, p.ln1_gain),
                                    view(grad, p.ln1_gain), view(grad, p.ln1_bias));
  }

  view(grad, layout_.bos).row(0) += dx.row(0);
  auto demb = view(grad, layout_.token_embedding);
  for (Eigen::Index t = 1; t < T; ++t) demb.row(acts.tokens[static_cast<std::size_t>(t - 1)]) += dx.row(t);
}

template class BasicTinyLm<float>;
template class BasicTinyLm<double>;

std::size_t default_overlap(std::size_t context_limit) {
  return std::max<std::size_t>(1, context_limit / 4);
}

template <class Real>
LogProbTrace forward_logprobs(const BasicTinyLm<Real>& model, const TokenSequence& sequence,
                              std::size_t context_limit, std::size_t overlap) {
  const std::size_t N = sequence.size();
  const auto C = static_cast<std::size_t>(model.config().max_context);
  if (N == 0) throw std::invalid_argument("cannot score an empty sequence");
  if (context_limit < 2 || context_limit > C) {
    throw std::invalid_argument("context limit " + std::to_string(context_limit) +
                                " outside [2, model context " + std::to_string(C) + "]");
  }
  LogProbTrace trace{sequence.seq_id, context_limit, std::vector<double>(N)};
  if (context_limit >= N) {
    trace.logp = model.forward(sequence.ids).target_logp;
    return trace;
  }
  if (overlap == 0) overlap = default_overlap(context_limit);
  const auto plan = plan_windows(N, context_limit, overlap);
  const std::span<const TokenId> ids(sequence.ids);
  for (const auto& e : plan.entries) {
    const auto fwd = model.forward(ids.subspan(e.window_start, e.window_end - e.window_start));
    for (std::size_t i = e.predict_start; i < e.predict_end; ++i) {
      trace.logp[i] = fwd.target_logp[i - e.window_start];
    }
  }
  return trace;
}

template LogProbTrace forward_logprobs(const BasicTinyLm<float>&, const TokenSequence&, std::size_t,
                                       std::size_t);
template LogProbTrace forward_logprobs(const BasicTinyLm<double>&, const TokenSequence&, std::size_t,
                                       std::size_t);

TinyLm extend_context(const TinyLm& model, int new_context, double rope_factor) {
  if (new_context <= model.config().max_context) {
    throw std::invalid_argument("extended context " + std::to_string(new_context) +
                                " must exceed current context " +
                                std::to_string(model.config().max_context));
  }
  if (!(rope_factor > 1.0)) throw std::invalid_argument("rotary base factor must be > 1");
  return model.with_context(new_context, model.config().rope_base * rope_factor);
}

double weighted_nll(const LogProbTrace& trace, std::span<const double> weights) {
  if (weights.size() != trace.logp.size()) {
    throw std::invalid_argument("weight count " + std::to_string(weights.size()) +
                                " != trace length " + std::to_string(trace.logp.size()));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
    loss -= weights[i] * trace.logp[i];
  }
  return loss;
}

}  // namespace tokweight
