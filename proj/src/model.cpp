// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sspo/rng.hpp"

namespace sspo::policy {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// C (T x n) = A (T x m) * W (m x n)
void matmul(const double* a, std::size_t t, std::size_t m, const double* w, std::size_t n, double* c) {
  for (std::size_t r = 0; r < t; ++r) {
    double* cr = c + r * n;
    std::fill(cr, cr + n, 0.0);
    const double* ar = a + r * m;
    for (std::size_t k = 0; k < m; ++k) {
      const double av = ar[k];
      const double* wk = w + k * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * wk[j];
    }
  }
}

// dA (T x m) += dC (T x n) * W^T, W is m x n
void matmul_bt_acc(const double* dc, std::size_t t, std::size_t n, const double* w, std::size_t m, double* da) {
  for (std::size_t r = 0; r < t; ++r) {
    const double* dcr = dc + r * n;
    double* dar = da + r * m;
    for (std::size_t k = 0; k < m; ++k) {
      const double* wk = w + k * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dcr[j] * wk[j];
      dar[k] += s;
    }
  }
}

// dW (m x n) += A^T (m x T) * dC (T x n)
void matmul_at_acc(const double* a, std::size_t t, std::size_t m, const double* dc, std::size_t n, double* dw) {
  for (std::size_t r = 0; r < t; ++r) {
    const double* ar = a + r * m;
    const double* dcr = dc + r * n;
    for (std::size_t k = 0; k < m; ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      double* dwk = dw + k * n;
      for (std::size_t j = 0; j < n; ++j) dwk[j] += av * dcr[j];
    }
  }
}

void layer_norm_row(const double* x, std::size_t d, const double* g, const double* b, double* xhat, double* rstd,
                    double* y) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(d);
  const double rs = 1.0 / std::sqrt(var + kLnEps);
  *rstd = rs;
  for (std::size_t i = 0; i < d; ++i) {
    xhat[i] = (x[i] - mean) * rs;
    y[i] = g[i] * xhat[i] + b[i];
  }
}

// dx += LN'(dy); optionally accumulates dg, db.
void layer_norm_back_row(const double* dy, const double* xhat, double rstd, const double* g, std::size_t d,
                         double* dx, double* dg, double* db) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dxh = dy[i] * g[i];
    m1 += dxh;
    m2 += dxh * xhat[i];
    if (dg) {
      dg[i] += dy[i] * xhat[i];
      db[i] += dy[i];
    }
  }
  m1 /= static_cast<double>(d);
  m2 /= static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) dx[i] += rstd * (dy[i] * g[i] - m1 - xhat[i] * m2);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }
inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void fill_normal(Rng& rng, double* p, std::size_t n, double std) {
  for (std::size_t i = 0; i < n; ++i) p[i] = rng.normal() * std;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size < special::count) fail(ErrorKind::config, "model: vocabulary too small");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    fail(ErrorKind::config, "model: d_model must be a positive multiple of n_heads");
  if (n_layers == 0 || d_ff == 0 || context_window == 0 || max_lines == 0 || max_slots == 0)
    fail(ErrorKind::config, "model: zero-sized dimension");
  if (lora_rank == 0 || !(lora_alpha > 0)) fail(ErrorKind::config, "model: invalid adapter rank/alpha");
}

Position StructureTracker::make(Role r, int line, int slot) const {
  return {static_cast<int>(r), std::clamp(line, 0, max_lines_ - 1), std::clamp(slot, 0, max_slots_ - 1)};
}

Position StructureTracker::push(TokenId t) {
  if (t < 0 || static_cast<std::size_t>(t) >= classes_->size())
    fail(ErrorKind::vocabulary, "token id out of range: " + std::to_string(t));
  switch (t) {
    case special::bos:
    case special::task:
      return make(Role::head, 0, 0);
    case special::terms:
      state_ = State::terms;
      line_ = slot_ = 0;
      return make(Role::head, 0, 0);
    case special::lines:
      state_ = State::lines;
      line_ = slot_ = 0;
      return make(Role::head, 0, 0);
    case special::answer: {
      const Position p = make(Role::answer, line_, 0);
      state_ = State::response_source;
      line_ = slot_ = 0;
      return p;
    }
    case special::eos:
      state_ = State::done;
      return make(Role::eos, line_, 0);
    case special::open:
      if (state_ != State::response_source) return make(Role::other, line_, slot_);
      state_ = State::response_target;
      slot_ = 0;
      return make(Role::open, line_, 0);
    case special::close:
      if (state_ != State::response_target) return make(Role::other, line_, slot_);
      return make(Role::close, line_, slot_);
    case special::newline:
      switch (state_) {
        case State::terms: {
          const Position p = make(Role::term_sep, line_, slot_);
          ++line_;
          slot_ = 0;
          return p;
        }
        case State::lines: {
          const Position p = make(Role::prompt_sep, line_, slot_);
          ++line_;
          slot_ = 0;
          return p;
        }
        case State::response_source:
        case State::response_target:
          ++line_;
          slot_ = 0;
          state_ = State::response_source;
          return make(Role::response_sep, line_, 0);
        default:
          return make(Role::other, line_, slot_);
      }
    default:
      break;
  }
  const TokenClass cls = (*classes_)[static_cast<std::size_t>(t)];
  switch (state_) {
    case State::terms: {
      const Position p = make(slot_ == 0 ? Role::term_source : Role::term_target, line_, slot_);
      ++slot_;
      return p;
    }
    case State::lines: {
      const Position p = make(Role::prompt_source, line_, slot_);
      ++slot_;
      return p;
    }
    case State::response_source:
      ++slot_;
      return make(Role::response_source, line_, slot_);
    case State::response_target:
      if (cls == TokenClass::function) return make(Role::function, line_, slot_);
      ++slot_;
      return make(Role::target, line_, slot_);
    default:
      return make(Role::other, line_, slot_);
  }
}

Layout::Layout(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, v = c.vocab_size;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t o = off;
    off += n;
    return o;
  };
  tok = take(v * d);
  role = take(static_cast<std::size_t>(Role::count) * d);
  line = take(c.max_lines * d);
  slot = take(c.max_slots * d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerOffsets L{};
    L.ln1_g = take(d);
    L.ln1_b = take(d);
    L.wq = take(d * d);
    L.wk = take(d * d);
    L.wv = take(d * d);
    L.wo = take(d * d);
    L.ln2_g = take(d);
    L.ln2_b = take(d);
    L.w1 = take(d * f);
    L.b1 = take(f);
    L.w2 = take(f * d);
    L.b2 = take(d);
    layers.push_back(L);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  wout = take(d * v);
  bout = take(v);
  total = off;
  off = 0;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    std::array<AdapterOffsets, 3> a{};
    for (auto& x : a) {
      x.a = take(d * c.lora_rank);
      x.b = take(c.lora_rank * d);
    }
    adapters.push_back(a);
  }
  adapter_total = off;
}

Gradient& Gradient::operator+=(const Gradient& o) {
  for (std::size_t i = 0; i < base.size(); ++i) base[i] += o.base[i];
  for (std::size_t i = 0; i < adapters.size(); ++i) adapters[i] += o.adapters[i];
  return *this;
}

Gradient& Gradient::operator*=(double s) {
  for (double& x : base) x *= s;
  for (double& x : adapters) x *= s;
  return *this;
}

void Gradient::set_zero() {
  std::fill(base.begin(), base.end(), 0.0);
  std::fill(adapters.begin(), adapters.end(), 0.0);
}

double Gradient::dot(const Gradient& o) const {
  double s = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) s += base[i] * o.base[i];
  for (std::size_t i = 0; i < adapters.size(); ++i) s += adapters[i] * o.adapters[i];
  return s;
}

ModelConfig default_config(const Vocabulary& vocab) {
  ModelConfig c;
  c.vocab_size = vocab.size();
  return c;
}

PolicyParams init_params(const ModelConfig& config, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed,
                         InitScheme scheme) {
  config.validate();
  if (!vocab || vocab->size() != config.vocab_size)
    fail(ErrorKind::config, "model: vocabulary size does not match config");
  PolicyParams p;
  p.config = config;
  p.vocab = std::move(vocab);
  p.seed_lineage.push_back(seed);
  const Layout L(config);
  p.base.assign(L.total, 0.0);
  Rng rng(derive_seed(seed, 0x1417));
  const std::size_t d = config.d_model, f = config.d_ff, v = config.vocab_size;
  double* w = p.base.data();
  const double emb = 0.5;
  fill_normal(rng, w + L.tok, v * d, emb);
  fill_normal(rng, w + L.role, static_cast<std::size_t>(Role::count) * d, emb);
  fill_normal(rng, w + L.line, config.max_lines * d, emb);
  fill_normal(rng, w + L.slot, config.max_slots * d, emb);
  const double depth = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (const auto& l : L.layers) {
    std::fill(w + l.ln1_g, w + l.ln1_g + d, 1.0);
    std::fill(w + l.ln2_g, w + l.ln2_g + d, 1.0);
    fill_normal(rng, w + l.wq, d * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(rng, w + l.wk, d * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(rng, w + l.wv, d * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(rng, w + l.wo, d * d, depth / std::sqrt(static_cast<double>(d)));
    fill_normal(rng, w + l.w1, d * f, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(rng, w + l.w2, f * d, depth / std::sqrt(static_cast<double>(f)));
  }
  std::fill(w + L.lnf_g, w + L.lnf_g + d, 1.0);
  if (scheme == InitScheme::standard) fill_normal(rng, w + L.wout, d * v, 0.5 / std::sqrt(static_cast<double>(d)));
  return p;
}

void attach_adapters(PolicyParams& params, std::uint64_t seed, bool freeze_base) {
  const Layout L(params.config);
  params.adapters.assign(L.adapter_total, 0.0);
  params.freeze_base = freeze_base;
  params.seed_lineage.push_back(seed);
  Rng rng(derive_seed(seed, 0xada));
  const std::size_t d = params.config.d_model, r = params.config.lora_rank;
  for (const auto& layer : L.adapters)
    for (const auto& a : layer) fill_normal(rng, params.adapters.data() + a.a, d * r, 1.0 / std::sqrt(static_cast<double>(d)));
}

namespace {

// W (d x d) += s * A (d x r) * B (r x d)
void fold_adapter(const ModelConfig& c, const double* a, const double* b, double* w) {
  const std::size_t d = c.d_model, r = c.lora_rank;
  const double s = c.lora_scale();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      const double aij = s * a[i * r + j];
      if (aij == 0.0) continue;
      const double* bj = b + j * d;
      double* wi = w + i * d;
      for (std::size_t k = 0; k < d; ++k) wi[k] += aij * bj[k];
    }
}

void fold_all(const PolicyParams& p, const Layout& L, std::vector<double>& w) {
  if (!p.has_adapters()) return;
  for (std::size_t l = 0; l < L.layers.size(); ++l) {
    const std::size_t targets[3] = {L.layers[l].wq, L.layers[l].wk, L.layers[l].wv};
    for (int m = 0; m < 3; ++m)
      fold_adapter(p.config, p.adapters.data() + L.adapters[l][m].a, p.adapters.data() + L.adapters[l][m].b,
                   w.data() + targets[m]);
  }
}

}  // namespace

PolicyParams merge_adapter(const PolicyParams& params) {
  PolicyParams out = params;
  if (!params.has_adapters()) return out;
  const Layout L(params.config);
  fold_all(params, L, out.base);
  out.adapters.clear();
  out.freeze_base = false;
  return out;
}

EffectiveWeights::EffectiveWeights(const PolicyParams& params)
    : config(params.config), layout(params.config), w(params.base), classes(&params.vocab->classes()) {
  fold_all(params, layout, w);
}

std::vector<Position> annotate(const EffectiveWeights& w, const TokenSeq& ids) {
  StructureTracker tr(w.classes, w.config.max_lines, w.config.max_slots);
  std::vector<Position> out;
  out.reserve(ids.size());
  for (TokenId t : ids) out.push_back(tr.push(t));
  return out;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double s = 0.0;
  for (double z : logits) s += std::exp(z - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

// ---------------------------------------------------------------------------
// Forward / backward

ForwardPass::ForwardPass(const EffectiveWeights& weights, const TokenSeq& ids, std::vector<std::size_t> outputs)
    : w_(weights), outputs_(std::move(outputs)) {
  const auto& c = w_.config;
  if (ids.size() > c.context_window)
    fail(ErrorKind::capacity, "sequence of " + std::to_string(ids.size()) + " tokens exceeds context window " +
                                  std::to_string(c.context_window));
  std::size_t T = 0;
  for (std::size_t o : outputs_) {
    if (o >= ids.size()) fail(ErrorKind::shape, "output position beyond sequence");
    T = std::max(T, o + 1);
  }
  ids_.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(T));
  pos_ = annotate(w_, ids_);
  const std::size_t d = c.d_model, f = c.d_ff, H = c.n_heads, dh = d / H, V = c.vocab_size;
  const double* W = w_.w.data();
  const auto& L = w_.layout;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    if (ids_[t] < 0 || static_cast<std::size_t>(ids_[t]) >= V) fail(ErrorKind::vocabulary, "token out of range");
    const double* e0 = W + L.tok + static_cast<std::size_t>(ids_[t]) * d;
    const double* e1 = W + L.role + static_cast<std::size_t>(pos_[t].role) * d;
    const double* e2 = W + L.line + static_cast<std::size_t>(pos_[t].line) * d;
    const double* e3 = W + L.slot + static_cast<std::size_t>(pos_[t].slot) * d;
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = e0[i] + e1[i] + e2[i] + e3[i];
  }

  layers_.resize(c.n_layers);
  std::vector<double> tmp(T * std::max(d, f));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto& C = layers_[l];
    const auto& O = L.layers[l];
    C.x = x;
    C.xhat1.resize(T * d);
    C.rstd1.resize(T);
    C.a.resize(T * d);
    for (std::size_t t = 0; t < T; ++t)
      layer_norm_row(&x[t * d], d, W + O.ln1_g, W + O.ln1_b, &C.xhat1[t * d], &C.rstd1[t], &C.a[t * d]);
    C.q.resize(T * d);
    C.k.resize(T * d);
    C.v.resize(T * d);
    matmul(C.a.data(), T, d, W + O.wq, d, C.q.data());
    matmul(C.a.data(), T, d, W + O.wk, d, C.k.data());
    matmul(C.a.data(), T, d, W + O.wv, d, C.v.data());
    C.p.assign(H * T * T, 0.0);
    C.o.assign(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        double* prow = &C.p[(h * T + t) * T];
        const double* qt = &C.q[t * d + h * dh];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t; ++u) {
          const double* ku = &C.k[u * d + h * dh];
          double s = 0.0;
          for (std::size_t i = 0; i < dh; ++i) s += qt[i] * ku[i];
          prow[u] = s * scale;
          mx = std::max(mx, prow[u]);
        }
        double z = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          prow[u] = std::exp(prow[u] - mx);
          z += prow[u];
        }
        double* ot = &C.o[t * d + h * dh];
        for (std::size_t u = 0; u <= t; ++u) {
          prow[u] /= z;
          const double* vu = &C.v[u * d + h * dh];
          const double pu = prow[u];
          for (std::size_t i = 0; i < dh; ++i) ot[i] += pu * vu[i];
        }
      }
    }
    matmul(C.o.data(), T, d, W + O.wo, d, tmp.data());
    C.x1.resize(T * d);
    for (std::size_t i = 0; i < T * d; ++i) C.x1[i] = x[i] + tmp[i];
    C.xhat2.resize(T * d);
    C.rstd2.resize(T);
    C.c.resize(T * d);
    for (std::size_t t = 0; t < T; ++t)
      layer_norm_row(&C.x1[t * d], d, W + O.ln2_g, W + O.ln2_b, &C.xhat2[t * d], &C.rstd2[t], &C.c[t * d]);
    C.z.resize(T * f);
    matmul(C.c.data(), T, d, W + O.w1, f, C.z.data());
    C.g.resize(T * f);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < f; ++j) {
        C.z[t * f + j] += W[O.b1 + j];
        C.g[t * f + j] = gelu(C.z[t * f + j]);
      }
    matmul(C.g.data(), T, f, W + O.w2, d, tmp.data());
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] = C.x1[t * d + i] + tmp[t * d + i] + W[O.b2 + i];
  }
  xfinal_ = std::move(x);

  const std::size_t R = outputs_.size();
  fxhat_.resize(R * d);
  frstd_.resize(R);
  hf_.resize(R * d);
  for (std::size_t r = 0; r < R; ++r)
    layer_norm_row(&xfinal_[outputs_[r] * d], d, W + L.lnf_g, W + L.lnf_b, &fxhat_[r * d], &frstd_[r], &hf_[r * d]);
  logits_.resize(R * V);
  matmul(hf_.data(), R, d, W + L.wout, V, logits_.data());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < V; ++j) logits_[r * V + j] += W[L.bout + j];
}

std::span<const double> ForwardPass::logits(std::size_t row) const {
  const std::size_t V = w_.config.vocab_size;
  return {logits_.data() + row * V, V};
}

std::span<const double> ForwardPass::hidden(std::size_t row) const {
  const std::size_t d = w_.config.d_model;
  return {hf_.data() + row * d, d};
}

void ForwardPass::backward(std::span<const double> dlogits, std::span<const double> dhidden,
                           std::vector<double>& grad, Mode mode) const {
  const auto& c = w_.config;
  const std::size_t d = c.d_model, f = c.d_ff, H = c.n_heads, dh = d / H, V = c.vocab_size;
  const std::size_t T = ids_.size(), R = outputs_.size();
  const double* W = w_.w.data();
  const auto& L = w_.layout;
  double* G = grad.data();
  const bool full = mode == Mode::full;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (grad.size() != L.total) fail(ErrorKind::shape, "gradient buffer has wrong size");
  if (dlogits.size() != R * V) fail(ErrorKind::shape, "dlogits has wrong size");

  std::vector<double> dhf(R * d, 0.0);
  if (!dhidden.empty()) std::copy(dhidden.begin(), dhidden.end(), dhf.begin());
  if (full) {
    matmul_at_acc(hf_.data(), R, d, dlogits.data(), V, G + L.wout);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < V; ++j) G[L.bout + j] += dlogits[r * V + j];
  }
  matmul_bt_acc(dlogits.data(), R, V, W + L.wout, d, dhf.data());

  std::vector<double> dx(T * d, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    layer_norm_back_row(&dhf[r * d], &fxhat_[r * d], frstd_[r], W + L.lnf_g, d, &dx[outputs_[r] * d],
                        full ? G + L.lnf_g : nullptr, full ? G + L.lnf_b : nullptr);

  std::vector<double> dg(T * f), dz(T * f), dc(T * d), dx1(T * d), dout(T * d), dq(T * d), dk(T * d), dv(T * d),
      da(T * d), dp(T);
  for (std::size_t l = c.n_layers; l-- > 0;) {
    const auto& C = layers_[l];
    const auto& O = L.layers[l];
    // MLP
    if (full) {
      matmul_at_acc(C.g.data(), T, f, dx.data(), d, G + O.w2);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) G[O.b2 + i] += dx[t * d + i];
    }
    std::fill(dg.begin(), dg.end(), 0.0);
    matmul_bt_acc(dx.data(), T, d, W + O.w2, f, dg.data());
    for (std::size_t i = 0; i < T * f; ++i) dz[i] = dg[i] * gelu_grad(C.z[i]);
    if (full) {
      matmul_at_acc(C.c.data(), T, d, dz.data(), f, G + O.w1);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < f; ++j) G[O.b1 + j] += dz[t * f + j];
    }
    std::fill(dc.begin(), dc.end(), 0.0);
    matmul_bt_acc(dz.data(), T, f, W + O.w1, d, dc.data());
    dx1 = dx;
    for (std::size_t t = 0; t < T; ++t)
      layer_norm_back_row(&dc[t * d], &C.xhat2[t * d], C.rstd2[t], W + O.ln2_g, d, &dx1[t * d],
                          full ? G + O.ln2_g : nullptr, full ? G + O.ln2_b : nullptr);
    // attention output projection
    if (full) matmul_at_acc(C.o.data(), T, d, dx1.data(), d, G + O.wo);
    std::fill(dout.begin(), dout.end(), 0.0);
    matmul_bt_acc(dx1.data(), T, d, W + O.wo, d, dout.data());
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const double* prow = &C.p[(h * T + t) * T];
        const double* dot = &dout[t * d + h * dh];
        double sum = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          const double* vu = &C.v[u * d + h * dh];
          double s = 0.0;
          for (std::size_t i = 0; i < dh; ++i) s += dot[i] * vu[i];
          dp[u] = s;
          sum += prow[u] * s;
          double* dvu = &dv[u * d + h * dh];
          const double pu = prow[u];
          for (std::size_t i = 0; i < dh; ++i) dvu[i] += pu * dot[i];
        }
        const double* qt = &C.q[t * d + h * dh];
        double* dqt = &dq[t * d + h * dh];
        for (std::size_t u = 0; u <= t; ++u) {
          const double ds = prow[u] * (dp[u] - sum) * scale;
          if (ds == 0.0) continue;
          const double* ku = &C.k[u * d + h * dh];
          double* dku = &dk[u * d + h * dh];
          for (std::size_t i = 0; i < dh; ++i) {
            dqt[i] += ds * ku[i];
            dku[i] += ds * qt[i];
          }
        }
      }
    }
    matmul_at_acc(C.a.data(), T, d, dq.data(), d, G + O.wq);
    matmul_at_acc(C.a.data(), T, d, dk.data(), d, G + O.wk);
    matmul_at_acc(C.a.data(), T, d, dv.data(), d, G + O.wv);
    std::fill(da.begin(), da.end(), 0.0);
    matmul_bt_acc(dq.data(), T, d, W + O.wq, d, da.data());
    matmul_bt_acc(dk.data(), T, d, W + O.wk, d, da.data());
    matmul_bt_acc(dv.data(), T, d, W + O.wv, d, da.data());
    dx = dx1;
    for (std::size_t t = 0; t < T; ++t)
      layer_norm_back_row(&da[t * d], &C.xhat1[t * d], C.rstd1[t], W + O.ln1_g, d, &dx[t * d],
                          full ? G + O.ln1_g : nullptr, full ? G + O.ln1_b : nullptr);
  }
  if (!full) return;
  for (std::size_t t = 0; t < T; ++t) {
    double* g0 = G + L.tok + static_cast<std::size_t>(ids_[t]) * d;
    double* g1 = G + L.role + static_cast<std::size_t>(pos_[t].role) * d;
    double* g2 = G + L.line + static_cast<std::size_t>(pos_[t].line) * d;
    double* g3 = G + L.slot + static_cast<std::size_t>(pos_[t].slot) * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = dx[t * d + i];
      g0[i] += v;
      g1[i] += v;
      g2[i] += v;
      g3[i] += v;
    }
  }
}

void project_gradient(const PolicyParams& params, const EffectiveWeights& eff, const std::vector<double>& grad_eff,
                      Gradient& out) {
  if (!params.freeze_base)
    for (std::size_t i = 0; i < grad_eff.size(); ++i) out.base[i] += grad_eff[i];
  if (!params.has_adapters()) return;
  const auto& L = eff.layout;
  const std::size_t d = params.config.d_model, r = params.config.lora_rank;
  const double s = params.config.lora_scale();
  for (std::size_t l = 0; l < L.layers.size(); ++l) {
    const std::size_t targets[3] = {L.layers[l].wq, L.layers[l].wk, L.layers[l].wv};
    for (int m = 0; m < 3; ++m) {
      const double* dw = grad_eff.data() + targets[m];
      const double* A = params.adapters.data() + L.adapters[l][m].a;
      const double* B = params.adapters.data() + L.adapters[l][m].b;
      double* dA = out.adapters.data() + L.adapters[l][m].a;
      double* dB = out.adapters.data() + L.adapters[l][m].b;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < r; ++j) {
          const double* bj = B + j * d;
          const double* dwi = dw + i * d;
          double acc = 0.0;
          for (std::size_t k = 0; k < d; ++k) acc += dwi[k] * bj[k];
          dA[i * r + j] += s * acc;
          const double aij = s * A[i * r + j];
          double* dbj = dB + j * d;
          for (std::size_t k = 0; k < d; ++k) dbj[k] += aij * dwi[k];
        }
    }
  }
}

namespace {

std::vector<std::size_t> segment_outputs(const TokenSeq& prefix, const TokenSeq& segment) {
  std::vector<std::size_t> outs;
  for (std::size_t j = 0; j < segment.size(); ++j) outs.push_back(prefix.size() - 1 + j);
  return outs;
}

}  // namespace

double segment_logprob(const PolicyParams& params, const TokenSeq& prefix, const TokenSeq& segment) {
  if (segment.empty()) return 0.0;
  if (prefix.empty()) fail(ErrorKind::shape, "segment_logprob: empty prefix");
  TokenSeq ids(prefix);
  ids.insert(ids.end(), segment.begin(), segment.end());
  if (ids.size() > params.config.context_window)
    fail(ErrorKind::capacity, "segment_logprob: prefix + segment exceeds context window");
  const EffectiveWeights eff(params);
  const ForwardPass fp(eff, ids, segment_outputs(prefix, segment));
  std::vector<double> ls(params.config.vocab_size);
  double total = 0.0;
  for (std::size_t j = 0; j < segment.size(); ++j) {
    log_softmax(fp.logits(j), ls);
    total += ls[static_cast<std::size_t>(segment[j])];
  }
  return total;
}

LogProbGrad segment_logprob_grad(const PolicyParams& params, const TokenSeq& prefix, const TokenSeq& segment) {
  LogProbGrad out{0.0, Gradient::zeros_like(params)};
  if (segment.empty()) return out;
  if (prefix.empty()) fail(ErrorKind::shape, "segment_logprob: empty prefix");
  TokenSeq ids(prefix);
  ids.insert(ids.end(), segment.begin(), segment.end());
  if (ids.size() > params.config.context_window)
    fail(ErrorKind::capacity, "segment_logprob: prefix + segment exceeds context window");
  const EffectiveWeights eff(params);
  const ForwardPass fp(eff, ids, segment_outputs(prefix, segment));
  const std::size_t V = params.config.vocab_size;
  std::vector<double> dlogits(segment.size() * V);
  std::vector<double> ls(V);
  for (std::size_t j = 0; j < segment.size(); ++j) {
    log_softmax(fp.logits(j), ls);
    const auto y = static_cast<std::size_t>(segment[j]);
    out.value += ls[y];
    for (std::size_t v = 0; v < V; ++v) dlogits[j * V + v] = -std::exp(ls[v]);
    dlogits[j * V + y] += 1.0;
  }
  std::vector<double> geff(eff.layout.total, 0.0);
  fp.backward(dlogits, {}, geff, params.freeze_base ? ForwardPass::Mode::attention_only : ForwardPass::Mode::full);
  project_gradient(params, eff, geff, out.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Incremental decoding

Decoder::Decoder(const PolicyParams& params) : w_(params) {}
Decoder::Decoder(EffectiveWeights weights) : w_(std::move(weights)) {}

DecodeState Decoder::start(const TokenSeq& prefix) const {
  DecodeState s{std::vector<std::vector<double>>(w_.config.n_layers),
                std::vector<std::vector<double>>(w_.config.n_layers),
                StructureTracker(w_.classes, w_.config.max_lines, w_.config.max_slots),
                0,
                {},
                {}};
  if (prefix.size() > w_.config.context_window)
    fail(ErrorKind::capacity, "decoder: prefix exceeds context window");
  for (auto& k : s.keys) k.reserve(w_.config.d_model * (prefix.size() + 64));
  for (auto& v : s.values) v.reserve(w_.config.d_model * (prefix.size() + 64));
  for (TokenId t : prefix) push(s, t);
  return s;
}

void Decoder::push(DecodeState& s, TokenId token) const {
  const auto& c = w_.config;
  if (s.length + 1 > c.context_window) fail(ErrorKind::capacity, "decoder: context window exhausted");
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) fail(ErrorKind::vocabulary, "token out of range");
  const std::size_t d = c.d_model, f = c.d_ff, H = c.n_heads, dh = d / H, V = c.vocab_size;
  const double* W = w_.w.data();
  const auto& L = w_.layout;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Position p = s.tracker.push(token);
  std::vector<double> x(d), a(d), xhat(d), q(d), k(d), v(d), o(d), tmp(std::max(d, f)), g(f);
  double rstd;
  const double* e0 = W + L.tok + static_cast<std::size_t>(token) * d;
  const double* e1 = W + L.role + static_cast<std::size_t>(p.role) * d;
  const double* e2 = W + L.line + static_cast<std::size_t>(p.line) * d;
  const double* e3 = W + L.slot + static_cast<std::size_t>(p.slot) * d;
  for (std::size_t i = 0; i < d; ++i) x[i] = e0[i] + e1[i] + e2[i] + e3[i];
  const std::size_t T = s.length + 1;
  std::vector<double> scores(T);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& O = L.layers[l];
    layer_norm_row(x.data(), d, W + O.ln1_g, W + O.ln1_b, xhat.data(), &rstd, a.data());
    matmul(a.data(), 1, d, W + O.wq, d, q.data());
    matmul(a.data(), 1, d, W + O.wk, d, k.data());
    matmul(a.data(), 1, d, W + O.wv, d, v.data());
    auto& K = s.keys[l];
    auto& Vc = s.values[l];
    K.insert(K.end(), k.begin(), k.end());
    Vc.insert(Vc.end(), v.begin(), v.end());
    std::fill(o.begin(), o.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u < T; ++u) {
        const double* ku = &K[u * d + h * dh];
        double sc = 0.0;
        for (std::size_t i = 0; i < dh; ++i) sc += q[h * dh + i] * ku[i];
        scores[u] = sc * scale;
        mx = std::max(mx, scores[u]);
      }
      double z = 0.0;
      for (std::size_t u = 0; u < T; ++u) {
        scores[u] = std::exp(scores[u] - mx);
        z += scores[u];
      }
      for (std::size_t u = 0; u < T; ++u) {
        const double pu = scores[u] / z;
        const double* vu = &Vc[u * d + h * dh];
        for (std::size_t i = 0; i < dh; ++i) o[h * dh + i] += pu * vu[i];
      }
    }
    matmul(o.data(), 1, d, W + O.wo, d, tmp.data());
    for (std::size_t i = 0; i < d; ++i) x[i] += tmp[i];
    layer_norm_row(x.data(), d, W + O.ln2_g, W + O.ln2_b, xhat.data(), &rstd, a.data());
    matmul(a.data(), 1, d, W + O.w1, f, g.data());
    for (std::size_t j = 0; j < f; ++j) g[j] = gelu(g[j] + W[O.b1 + j]);
    matmul(g.data(), 1, f, W + O.w2, d, tmp.data());
    for (std::size_t i = 0; i < d; ++i) x[i] += tmp[i] + W[O.b2 + i];
  }
  layer_norm_row(x.data(), d, W + L.lnf_g, W + L.lnf_b, xhat.data(), &rstd, a.data());
  s.last_logits.resize(V);
  matmul(a.data(), 1, d, W + L.wout, V, s.last_logits.data());
  for (std::size_t j = 0; j < V; ++j) s.last_logits[j] += W[L.bout + j];
  s.length = T;
  s.tokens.push_back(token);
}

}  // namespace sspo::policy
