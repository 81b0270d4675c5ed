// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/align.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "sspo/parallel.hpp"
#include "sspo/rng.hpp"

namespace sspo::align {

using policy::EffectiveWeights;
using policy::ForwardPass;
using policy::Gradient;
using policy::PolicyParams;

std::string to_string(FormatControl f) {
  switch (f) {
    case FormatControl::none: return "none";
    case FormatControl::tkld: return "tkld";
    case FormatControl::low_rank: return "low_rank";
  }
  return "none";
}

FormatControl format_control_from(const std::string& s) {
  if (s == "none") return FormatControl::none;
  if (s == "tkld") return FormatControl::tkld;
  if (s == "low_rank") return FormatControl::low_rank;
  fail(ErrorKind::config, "unknown format_control '" + s + "' (none|tkld|low_rank)");
}

void LossConfig::validate() const {
  if (!(beta > 0.0)) fail(ErrorKind::config, "loss: beta must be positive");
  if (!(lambda_tkld >= 0.0)) fail(ErrorKind::config, "loss: lambda_tkld must be non-negative");
  if (!(clip_epsilon > 0.0)) fail(ErrorKind::config, "loss: clip_epsilon must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail(ErrorKind::config, "loss: gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail(ErrorKind::config, "loss: gae_lambda must be in [0, 1]");
  if (batch_lines == 0) fail(ErrorKind::config, "loss: batch_lines must be >= 1");
}

namespace {

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

ForwardPass::Mode mode_for(const PolicyParams& p) {
  return p.freeze_base ? ForwardPass::Mode::attention_only : ForwardPass::Mode::full;
}

/// Forward pass over prefix ⊕ tokens with log-softmax rows at the positions
/// predicting each token.
struct SeqEval {
  std::unique_ptr<ForwardPass> fp;
  std::vector<double> logsm;  // rows x V
  TokenSeq tokens;
  double logp = 0.0;
  std::size_t V = 0;

  std::span<const double> row(std::size_t j) const { return {logsm.data() + j * V, V}; }
};

SeqEval evaluate(const EffectiveWeights& eff, const TokenSeq& prefix, const TokenSeq& tokens) {
  SeqEval e;
  e.V = eff.config.vocab_size;
  e.tokens = tokens;
  if (tokens.empty()) return e;
  if (prefix.empty()) fail(ErrorKind::shape, "evaluate: empty prefix");
  TokenSeq ids(prefix);
  ids.insert(ids.end(), tokens.begin(), tokens.end());
  if (ids.size() > eff.config.context_window) fail(ErrorKind::capacity, "sequence exceeds the context window");
  std::vector<std::size_t> outs(tokens.size());
  std::iota(outs.begin(), outs.end(), prefix.size() - 1);
  e.fp = std::make_unique<ForwardPass>(eff, ids, std::move(outs));
  e.logsm.resize(tokens.size() * e.V);
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    policy::log_softmax(e.fp->logits(j), {e.logsm.data() + j * e.V, e.V});
    e.logp += e.logsm[j * e.V + static_cast<std::size_t>(tokens[j])];
  }
  return e;
}

/// dlogits += scale * d(logp)/dlogits.
void add_logp_grad(const SeqEval& e, double scale, std::vector<double>& dlogits) {
  for (std::size_t j = 0; j < e.tokens.size(); ++j) {
    const auto r = e.row(j);
    double* d = dlogits.data() + j * e.V;
    for (std::size_t v = 0; v < e.V; ++v) d[v] -= scale * std::exp(r[v]);
    d[static_cast<std::size_t>(e.tokens[j])] += scale;
  }
}

/// Summed KL(theta || ref) over rows; dlogits += scale * dKL/dlogits.
double add_kl(const SeqEval& e, std::span<const double> ref_logsm, double scale, std::vector<double>* dlogits) {
  double total = 0.0;
  for (std::size_t j = 0; j < e.tokens.size(); ++j) {
    const auto r = e.row(j);
    const double* q = ref_logsm.data() + j * e.V;
    double kl = 0.0;
    for (std::size_t v = 0; v < e.V; ++v) kl += std::exp(r[v]) * (r[v] - q[v]);
    kl = std::max(kl, 0.0);
    total += kl;
    if (dlogits) {
      double* d = dlogits->data() + j * e.V;
      for (std::size_t v = 0; v < e.V; ++v) d[v] += scale * std::exp(r[v]) * (r[v] - q[v] - kl);
    }
  }
  return total;
}

void backprop(const PolicyParams& p, const EffectiveWeights& eff, const SeqEval& e, const std::vector<double>& dlogits,
              Gradient& g) {
  if (!e.fp) return;
  std::vector<double> geff(eff.layout.total, 0.0);
  e.fp->backward(dlogits, {}, geff, mode_for(p));
  policy::project_gradient(p, eff, geff, g);
}

struct RefSegment {
  double logp = 0.0;
  std::vector<double> logsm;  // only when the KL term is needed
};

RefSegment reference_segment(const EffectiveWeights& ref, const TokenSeq& prefix, const TokenSeq& tokens,
                             bool with_dist) {
  SeqEval e = evaluate(ref, prefix, tokens);
  return {e.logp, with_dist ? std::move(e.logsm) : std::vector<double>{}};
}

struct PairRef {
  RefSegment chosen, rejected;
};

struct PairTerms {
  double dpo = 0.0;
  double kl = 0.0;
};

/// One preference pair: DPO term plus optional KL on the chosen positions.
PairTerms pair_terms(const PolicyParams& p, const EffectiveWeights& eff, const TokenSeq& prefix, const TokenSeq& chosen,
                     const TokenSeq& rejected, const PairRef& ref, double beta, double lambda, double scale,
                     Gradient* g) {
  const SeqEval c = evaluate(eff, prefix, chosen);
  const SeqEval r = evaluate(eff, prefix, rejected);
  const double h = (c.logp - ref.chosen.logp) - (r.logp - ref.rejected.logp);
  PairTerms t;
  t.dpo = -log_sigmoid(beta * h);
  const bool kl = lambda > 0.0;
  if (!g) {
    if (kl) t.kl = add_kl(c, ref.chosen.logsm, 0.0, nullptr);
    return t;
  }
  const double dh = -beta * sigmoid(-beta * h) * scale;
  std::vector<double> dc(chosen.size() * c.V, 0.0), dr(rejected.size() * r.V, 0.0);
  add_logp_grad(c, dh, dc);
  add_logp_grad(r, -dh, dr);
  if (kl) t.kl = add_kl(c, ref.chosen.logsm, lambda * scale, &dc);
  backprop(p, eff, c, dc, *g);
  backprop(p, eff, r, dr, *g);
  return t;
}

PairRef pair_reference(const EffectiveWeights& ref, const PreferencePair& pair, bool with_dist) {
  return {reference_segment(ref, pair.prefix, sampling::segment_tokens(pair.chosen), with_dist),
          reference_segment(ref, pair.prefix, sampling::segment_tokens(pair.rejected), false)};
}

PairRef response_reference(const EffectiveWeights& ref, const ResponsePair& pair, bool with_dist) {
  return {reference_segment(ref, pair.prompt, pair.chosen, with_dist),
          reference_segment(ref, pair.prompt, pair.rejected, false)};
}

}  // namespace

double segment_contrast(const PolicyParams& policy, const PolicyParams& reference, const PreferencePair& pair) {
  const auto c = sampling::segment_tokens(pair.chosen);
  const auto r = sampling::segment_tokens(pair.rejected);
  return (policy::segment_logprob(policy, pair.prefix, c) - policy::segment_logprob(reference, pair.prefix, c)) -
         (policy::segment_logprob(policy, pair.prefix, r) - policy::segment_logprob(reference, pair.prefix, r));
}

LossGrad dpo_segment_loss(const PolicyParams& policy, const PolicyParams& reference, const PreferencePair& pair,
                          double beta) {
  const EffectiveWeights eff(policy), ref(reference);
  LossGrad out{0.0, Gradient::zeros_like(policy)};
  const auto pr = pair_reference(ref, pair, false);
  out.value = pair_terms(policy, eff, pair.prefix, sampling::segment_tokens(pair.chosen),
                         sampling::segment_tokens(pair.rejected), pr, beta, 0.0, 1.0, &out.grad)
                  .dpo;
  return out;
}

namespace {

/// Batch objective with cached reference terms; returns {dpo mean, kl term}.
std::pair<double, double> sspo_batch(const PolicyParams& policy, const EffectiveWeights& eff,
                                     std::span<const PreferencePair* const> batch, std::span<const PairRef* const> refs,
                                     double beta, double lambda, Gradient& grad, std::size_t workers) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> kls(batch.size());
  const double dpo = parallel::accumulate(
      batch.size(), grad,
      [&](std::size_t i, Gradient& g) {
        const auto t = pair_terms(policy, eff, batch[i]->prefix, sampling::segment_tokens(batch[i]->chosen),
                                  sampling::segment_tokens(batch[i]->rejected), *refs[i], beta, lambda, scale, &g);
        kls[i] = t.kl;
        return t.dpo;
      },
      workers);
  double kl = 0.0;
  for (double k : kls) kl += k;
  return {dpo * scale, lambda * kl * scale};
}

}  // namespace

LossGrad sspo_loss(const PolicyParams& policy, const PolicyParams& reference,
                   std::span<const PreferencePair* const> batch, const LossConfig& config, bool with_tkld,
                   std::size_t workers) {
  if (batch.empty()) fail(ErrorKind::empty_input, "sspo_loss: empty batch");
  const EffectiveWeights eff(policy), ref(reference);
  std::vector<PairRef> refs;
  for (const auto* p : batch) refs.push_back(pair_reference(ref, *p, with_tkld));
  std::vector<const PairRef*> rp;
  for (const auto& r : refs) rp.push_back(&r);
  LossGrad out{0.0, Gradient::zeros_like(policy)};
  const auto [dpo, kl] =
      sspo_batch(policy, eff, batch, rp, config.beta, with_tkld ? config.lambda_tkld : 0.0, out.grad, workers);
  out.value = dpo + kl;
  return out;
}

std::vector<double> token_kl(const PolicyParams& policy, const PolicyParams& reference, const TokenSpan& text) {
  const EffectiveWeights eff(policy), ref(reference);
  const SeqEval a = evaluate(eff, text.prefix, text.tokens);
  const SeqEval b = evaluate(ref, text.prefix, text.tokens);
  std::vector<double> out;
  for (std::size_t j = 0; j < text.tokens.size(); ++j) {
    const auto r = a.row(j), q = b.row(j);
    double kl = 0.0;
    for (std::size_t v = 0; v < a.V; ++v) kl += std::exp(r[v]) * (r[v] - q[v]);
    out.push_back(kl);
  }
  return out;
}

LossGrad tkld_penalty(const PolicyParams& policy, const PolicyParams& reference, std::span<const TokenSpan> texts,
                      double lambda) {
  const EffectiveWeights eff(policy), ref(reference);
  LossGrad out{0.0, Gradient::zeros_like(policy)};
  for (const auto& t : texts) {
    const SeqEval a = evaluate(eff, t.prefix, t.tokens);
    const SeqEval b = evaluate(ref, t.prefix, t.tokens);
    std::vector<double> d(t.tokens.size() * a.V, 0.0);
    out.value += lambda * add_kl(a, b.logsm, lambda, &d);
    backprop(policy, eff, a, d, out.grad);
  }
  return out;
}

LossGrad dpo_response_loss(const PolicyParams& policy, const PolicyParams& reference, const ResponsePair& pair,
                           double beta) {
  const EffectiveWeights eff(policy), ref(reference);
  LossGrad out{0.0, Gradient::zeros_like(policy)};
  const auto pr = response_reference(ref, pair, false);
  out.value = pair_terms(policy, eff, pair.prompt, pair.chosen, pair.rejected, pr, beta, 0.0, 1.0, &out.grad).dpo;
  return out;
}

// ---------------------------------------------------------------------------
// Decompositions

namespace {

double logratio_at(const EffectiveWeights& a, const EffectiveWeights& b, const TokenSeq& prefix,
                   const TokenSeq& tokens) {
  return evaluate(a, prefix, tokens).logp - evaluate(b, prefix, tokens).logp;
}

}  // namespace

double response_segment_logratio(const PolicyParams& policy, const PolicyParams& reference, const TokenSeq& prompt,
                                 const corpus::Document& doc, const std::vector<TokenSeq>& targets) {
  const EffectiveWeights eff(policy), ref(reference);
  const TokenSeq resp = sampling::assemble_response(doc, targets);
  TokenSeq ids(prompt);
  ids.insert(ids.end(), resp.begin(), resp.end());
  // Positions predicting segment tokens (targets and their ")").
  std::vector<std::size_t> outs;
  std::size_t pos = prompt.size();
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    pos += doc.lines[i].source.size() + 1;  // echo and "("
    for (std::size_t j = 0; j <= targets[i].size(); ++j) outs.push_back(pos + j - 1);
    pos += targets[i].size() + 2;  // target, ")", newline
  }
  const ForwardPass fa(eff, ids, outs), fb(ref, ids, outs);
  std::vector<double> la(policy.config.vocab_size), lb(policy.config.vocab_size);
  double total = 0.0;
  for (std::size_t r = 0; r < outs.size(); ++r) {
    policy::log_softmax(fa.logits(r), la);
    policy::log_softmax(fb.logits(r), lb);
    const auto y = static_cast<std::size_t>(ids[outs[r] + 1]);
    total += la[y] - lb[y];
  }
  return total;
}

double per_segment_logratio(const PolicyParams& policy, const PolicyParams& reference, const TokenSeq& prompt,
                            const corpus::Document& doc, const std::vector<TokenSeq>& targets) {
  const EffectiveWeights eff(policy), ref(reference);
  double total = 0.0;
  for (std::size_t i = 0; i < doc.lines.size(); ++i)
    total += logratio_at(eff, ref, sampling::line_prefix(prompt, doc, targets, i),
                         sampling::segment_tokens(targets[i]));
  return total;
}

double ContrastTerms::total() const {
  double s = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i) s += chosen[i] - rejected[i];
  return s;
}

ContrastTerms vanilla_contrast(const PolicyParams& policy, const PolicyParams& reference, const TokenSeq& prompt,
                               const corpus::Document& doc, const std::vector<TokenSeq>& chosen,
                               const std::vector<TokenSeq>& rejected) {
  const EffectiveWeights eff(policy), ref(reference);
  ContrastTerms t;
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    t.chosen.push_back(logratio_at(eff, ref, sampling::line_prefix(prompt, doc, chosen, i),
                                   sampling::segment_tokens(chosen[i])));
    t.rejected.push_back(logratio_at(eff, ref, sampling::line_prefix(prompt, doc, rejected, i),
                                     sampling::segment_tokens(rejected[i])));
  }
  return t;
}

ContrastTerms segment_contrast_terms(const PolicyParams& policy, const PolicyParams& reference, const TokenSeq& prompt,
                                     const corpus::Document& doc, const std::vector<TokenSeq>& chosen,
                                     const std::vector<TokenSeq>& rejected) {
  const EffectiveWeights eff(policy), ref(reference);
  ContrastTerms t;
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    const TokenSeq p = sampling::line_prefix(prompt, doc, chosen, i);
    t.chosen.push_back(logratio_at(eff, ref, p, sampling::segment_tokens(chosen[i])));
    t.rejected.push_back(logratio_at(eff, ref, p, sampling::segment_tokens(rejected[i])));
  }
  return t;
}

// ---------------------------------------------------------------------------
// PPO

void gae_advantages(sampling::Trajectory& trajectory, double gamma, double gae_lambda) {
  auto& s = trajectory.steps;
  double next_value = 0.0, next_adv = 0.0;
  for (std::size_t i = s.size(); i-- > 0;) {
    s[i].delta = s[i].reward + gamma * next_value - s[i].value;
    s[i].advantage = s[i].delta + gamma * gae_lambda * next_adv;
    next_value = s[i].value;
    next_adv = s[i].advantage;
  }
}

namespace {

/// Whole rollout sequence and the output rows of every step's segment.
struct RolloutLayout {
  TokenSeq ids;
  std::vector<std::size_t> outs;
  std::vector<std::size_t> first_row;  // per step
};

RolloutLayout rollout_layout(const sampling::Trajectory& t) {
  RolloutLayout L;
  if (t.steps.empty()) return L;
  L.ids = t.steps.back().prefix;
  const auto last = sampling::segment_tokens(t.steps.back().action);
  L.ids.insert(L.ids.end(), last.begin(), last.end());
  for (const auto& s : t.steps) {
    if (s.prefix.size() + s.action.size() + 1 > L.ids.size() ||
        !std::equal(s.prefix.begin(), s.prefix.end(), L.ids.begin()))
      fail(ErrorKind::shape, "trajectory prefixes are not nested");
    L.first_row.push_back(L.outs.size());
    for (std::size_t j = 0; j <= s.action.size(); ++j) L.outs.push_back(s.prefix.size() - 1 + j);
  }
  return L;
}

/// Log-probs of every step's segment under `eff`; rows kept for backprop.
struct RolloutEval {
  RolloutLayout layout;
  std::unique_ptr<ForwardPass> fp;
  std::vector<double> logsm;
  std::vector<double> step_logp;
};

RolloutEval evaluate_rollout(const EffectiveWeights& eff, const sampling::Trajectory& t) {
  RolloutEval e;
  e.layout = rollout_layout(t);
  if (t.steps.empty()) return e;
  const std::size_t V = eff.config.vocab_size;
  e.fp = std::make_unique<ForwardPass>(eff, e.layout.ids, e.layout.outs);
  e.logsm.resize(e.layout.outs.size() * V);
  for (std::size_t r = 0; r < e.layout.outs.size(); ++r)
    policy::log_softmax(e.fp->logits(r), {e.logsm.data() + r * V, V});
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    double lp = 0.0;
    const std::size_t n = t.steps[i].action.size() + 1;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t r = e.layout.first_row[i] + j;
      lp += e.logsm[r * V + static_cast<std::size_t>(e.layout.ids[e.layout.outs[r] + 1])];
    }
    e.step_logp.push_back(lp);
  }
  return e;
}

struct ClipTerms {
  double loss = 0.0;
  double approx_kl = 0.0;  // sum of old - new log-prob
};

ClipTerms clip_trajectory(const PolicyParams& p, const EffectiveWeights& eff, const sampling::Trajectory& t,
                          double eps, double scale, Gradient* g) {
  ClipTerms out;
  if (t.steps.empty()) return out;
  const RolloutEval e = evaluate_rollout(eff, t);
  const std::size_t V = eff.config.vocab_size;
  std::vector<double> d(g ? e.layout.outs.size() * V : 0, 0.0);
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    const double rho = std::exp(e.step_logp[i] - s.old_logprob);
    const double A = s.advantage;
    const double unclipped = rho * A;
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * A;
    out.loss -= std::min(unclipped, clipped);
    out.approx_kl += s.old_logprob - e.step_logp[i];
    if (!g || clipped < unclipped) continue;  // clipped branch is constant in theta
    const double coeff = -A * rho * scale;  // d(-rho A)/d logp
    for (std::size_t j = 0; j <= s.action.size(); ++j) {
      const std::size_t r = e.layout.first_row[i] + j;
      const auto y = static_cast<std::size_t>(e.layout.ids[e.layout.outs[r] + 1]);
      for (std::size_t v = 0; v < V; ++v) d[r * V + v] -= coeff * std::exp(e.logsm[r * V + v]);
      d[r * V + y] += coeff;
    }
  }
  if (g) {
    std::vector<double> geff(eff.layout.total, 0.0);
    e.fp->backward(d, {}, geff, mode_for(p));
    policy::project_gradient(p, eff, geff, *g);
  }
  out.loss *= scale;
  return out;
}

}  // namespace

LossGrad ppo_clip_loss(const PolicyParams& policy, std::span<const sampling::Trajectory> trajectories,
                       double clip_epsilon, std::size_t workers) {
  LossGrad out{0.0, Gradient::zeros_like(policy)};
  if (trajectories.empty()) return out;
  const EffectiveWeights eff(policy);
  const double scale = 1.0 / static_cast<double>(trajectories.size());
  out.value = parallel::accumulate(
      trajectories.size(), out.grad,
      [&](std::size_t i, Gradient& g) { return clip_trajectory(policy, eff, trajectories[i], clip_epsilon, scale, &g).loss; },
      workers);
  return out;
}

ValueModel ValueModel::init(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
  ValueModel m;
  m.inputs = inputs;
  m.hidden = hidden;
  m.w.assign(hidden * inputs + 2 * hidden + 1, 0.0);
  Rng rng(derive_seed(seed, 0x7a1));
  const double s1 = 1.0 / std::sqrt(static_cast<double>(inputs));
  for (std::size_t i = 0; i < hidden * inputs; ++i) m.w[i] = s1 * rng.normal();
  const double s2 = 0.1 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t i = 0; i < hidden; ++i) m.w[hidden * inputs + hidden + i] = s2 * rng.normal();
  return m;
}

double ValueModel::predict(std::span<const double> x) const {
  if (x.size() != inputs) fail(ErrorKind::shape, "value model: feature size mismatch");
  const double* b1 = w.data() + hidden * inputs;
  const double* w2 = b1 + hidden;
  double v = w2[hidden];
  for (std::size_t h = 0; h < hidden; ++h) {
    double z = b1[h];
    for (std::size_t i = 0; i < inputs; ++i) z += w[h * inputs + i] * x[i];
    v += w2[h] * std::tanh(z);
  }
  return v;
}

void ValueModel::backward(std::span<const double> x, double upstream, std::vector<double>& grad) const {
  const double* b1 = w.data() + hidden * inputs;
  const double* w2 = b1 + hidden;
  double* gb1 = grad.data() + hidden * inputs;
  double* gw2 = gb1 + hidden;
  gw2[hidden] += upstream;
  for (std::size_t h = 0; h < hidden; ++h) {
    double z = b1[h];
    for (std::size_t i = 0; i < inputs; ++i) z += w[h * inputs + i] * x[i];
    const double a = std::tanh(z);
    gw2[h] += upstream * a;
    const double dz = upstream * w2[h] * (1.0 - a * a);
    gb1[h] += dz;
    for (std::size_t i = 0; i < inputs; ++i) grad[h * inputs + i] += dz * x[i];
  }
}

std::vector<std::vector<double>> prefix_features(const PolicyParams& features_model,
                                                 const sampling::Trajectory& trajectory) {
  std::vector<std::vector<double>> out;
  if (trajectory.steps.empty()) return out;
  const EffectiveWeights eff(features_model);
  const TokenSeq& ids = trajectory.steps.back().prefix;
  std::vector<std::size_t> outs;
  for (const auto& s : trajectory.steps) {
    if (s.prefix.empty() || s.prefix.size() > ids.size() || !std::equal(s.prefix.begin(), s.prefix.end(), ids.begin()))
      fail(ErrorKind::shape, "trajectory prefixes are not nested");
    outs.push_back(s.prefix.size() - 1);
  }
  const ForwardPass fp(eff, ids, outs);
  for (std::size_t r = 0; r < outs.size(); ++r) {
    const auto h = fp.hidden(r);
    out.emplace_back(h.begin(), h.end());
  }
  return out;
}

double value_loss(const ValueModel& model, std::span<const std::vector<double>> features,
                  std::span<const sampling::Step> steps, std::vector<double>* grad) {
  if (features.size() != steps.size()) fail(ErrorKind::shape, "value_loss: features/steps length mismatch");
  if (steps.empty()) return 0.0;
  const double n = static_cast<double>(steps.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double target = steps[i].advantage + steps[i].value;
    const double v = model.predict(features[i]);
    loss += (v - target) * (v - target) / n;
    if (grad) model.backward(features[i], 2.0 * (v - target) / n, *grad);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training loops

PolicyParams prepare_policy(const PolicyParams& sft, FormatControl control, std::uint64_t seed) {
  PolicyParams p = policy::merge_adapter(sft);
  if (control == FormatControl::low_rank) policy::attach_adapters(p, derive_seed(seed, 0x10a), true);
  return p;
}

namespace {

void check_finite(double v, const std::string& what, const PolicyParams& last_good, std::size_t epoch) {
  if (!std::isfinite(v)) throw policy::TrainingDiverged(what + ": non-finite loss in epoch " + std::to_string(epoch),
                                                        last_good, epoch);
}

/// Shared epoch loop for the two preference trainers.
template <typename Pair, typename RefFn, typename LossFn>
TrainResult preference_loop(const PolicyParams& sft, const std::vector<const Pair*>& pairs, std::size_t batch,
                            const AlignConfig& config, RefFn&& make_ref, LossFn&& batch_loss,
                            const AlignCallback& on_epoch, const char* name) {
  config.loss.validate();
  TrainResult out{prepare_policy(sft, config.loss.format_control, config.seed), {}};
  if (config.loss.epochs == 0 || pairs.empty()) {
    out.params = sft;
    return out;
  }
  const bool tkld = config.loss.format_control == FormatControl::tkld;
  const PolicyParams& reference = sft;
  const EffectiveWeights ref(reference);
  std::vector<PairRef> refs = parallel::map<PairRef>(
      pairs.size(), [&](std::size_t i) { return make_ref(ref, *pairs[i], tkld); }, config.workers);
  PolicyParams& p = out.params;
  policy::AdamW opt(p, config.optimizer);
  Rng rng(derive_seed(config.seed, 0xd90));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Gradient grad = Gradient::zeros_like(p);
  for (std::size_t epoch = 0; epoch < config.loss.epochs; ++epoch) {
    for (std::size_t j = order.size(); j-- > 1;) std::swap(order[j], order[rng.below(j + 1)]);
    EpochRecord rec{epoch, 0.0, 0.0, 0};
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t m = std::min(batch, order.size() - start);
      std::vector<const Pair*> bp;
      std::vector<const PairRef*> br;
      for (std::size_t i = 0; i < m; ++i) {
        bp.push_back(pairs[order[start + i]]);
        br.push_back(&refs[order[start + i]]);
      }
      const EffectiveWeights eff(p);
      grad.set_zero();
      const auto [dpo, kl] = batch_loss(p, eff, bp, br, tkld ? config.loss.lambda_tkld : 0.0, grad);
      check_finite(dpo + kl, name, p, epoch);
      const double norm = opt.step(p, grad);
      check_finite(norm, name, p, epoch);
      rec.loss += dpo * static_cast<double>(m);
      rec.extra += kl * static_cast<double>(m);
      ++rec.steps;
    }
    rec.loss /= static_cast<double>(pairs.size());
    rec.extra /= static_cast<double>(pairs.size());
    out.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, p);
  }
  return out;
}

}  // namespace

TrainResult train_sspo(const PolicyParams& sft, const SampledDataset& sampled, const AlignConfig& config,
                       const AlignCallback& on_epoch) {
  const auto pairs = sampled.flatten();
  return preference_loop<PreferencePair>(
      sft, pairs, config.loss.batch_lines, config,
      [](const EffectiveWeights& ref, const PreferencePair& pr, bool dist) { return pair_reference(ref, pr, dist); },
      [&](const PolicyParams& p, const EffectiveWeights& eff, const std::vector<const PreferencePair*>& bp,
          const std::vector<const PairRef*>& br, double lambda, Gradient& g) {
        return sspo_batch(p, eff, bp, br, config.loss.beta, lambda, g, config.workers);
      },
      on_epoch, "sspo");
}

TrainResult train_dpo_vanilla(const PolicyParams& sft, const ResponsePairSet& set, const AlignConfig& config,
                              const AlignCallback& on_epoch) {
  std::vector<const ResponsePair*> pairs;
  for (const auto& p : set.pairs) pairs.push_back(&p);
  // A response holds many lines; keep roughly batch_lines lines per batch.
  std::size_t lines_per = 1;
  if (!set.pairs.empty()) {
    const auto& r = set.pairs.front().chosen;
    lines_per = std::max<std::size_t>(1, static_cast<std::size_t>(std::count(r.begin(), r.end(), special::newline)));
  }
  const std::size_t batch = std::max<std::size_t>(1, config.loss.batch_lines / lines_per);
  return preference_loop<ResponsePair>(
      sft, pairs, batch, config,
      [](const EffectiveWeights& ref, const ResponsePair& pr, bool dist) { return response_reference(ref, pr, dist); },
      [&](const PolicyParams& p, const EffectiveWeights& eff, const std::vector<const ResponsePair*>& bp,
          const std::vector<const PairRef*>& br, double lambda, Gradient& g) {
        const double scale = 1.0 / static_cast<double>(bp.size());
        std::vector<double> kls(bp.size());
        const double dpo = parallel::accumulate(
            bp.size(), g,
            [&](std::size_t i, Gradient& gi) {
              const auto t = pair_terms(p, eff, bp[i]->prompt, bp[i]->chosen, bp[i]->rejected, *br[i],
                                        config.loss.beta, lambda, scale, &gi);
              kls[i] = t.kl;
              return t.dpo;
            },
            config.workers);
        const double kl = std::accumulate(kls.begin(), kls.end(), 0.0);
        return std::pair<double, double>{dpo * scale, lambda * kl * scale};
      },
      on_epoch, "dpo");
}

TrainResult train_ppo(const PolicyParams& sft, const std::vector<corpus::Document>& query,
                      const sampling::SamplingConfig& sampling_config, const sampling::Oracles& oracles,
                      const AlignConfig& config, const AlignCallback& on_epoch) {
  config.loss.validate();
  TrainResult out{sft, {}};
  if (config.ppo_rounds == 0) return out;
  if (query.empty()) fail(ErrorKind::empty_input, "ppo: empty query set");
  out.params = prepare_policy(sft, config.loss.format_control, config.seed);
  PolicyParams& p = out.params;
  const PolicyParams features_model = policy::merge_adapter(sft);
  ValueModel vm = ValueModel::init(sft.config.d_model, config.value_hidden, config.seed);
  std::vector<double> vm_m(vm.w.size(), 0.0), vm_v(vm.w.size(), 0.0);
  std::size_t vm_t = 0;
  policy::AdamW opt(p, config.optimizer);
  Gradient grad = Gradient::zeros_like(p);

  for (std::size_t round = 0; round < config.ppo_rounds; ++round) {
    auto traj = sampling::ppo_rollout(p, query, sampling_config, oracles, {}, derive_seed(config.seed, 0x990, round));
    auto feats = parallel::map<std::vector<std::vector<double>>>(
        traj.size(), [&](std::size_t i) { return prefix_features(features_model, traj[i]); }, config.workers);
    double reward = 0.0;
    std::size_t steps = 0;
    for (std::size_t d = 0; d < traj.size(); ++d) {
      for (std::size_t i = 0; i < traj[d].steps.size(); ++i) {
        traj[d].steps[i].value = vm.predict(feats[d][i]);
        reward += traj[d].steps[i].reward;
        ++steps;
      }
      gae_advantages(traj[d], config.loss.gamma, config.loss.gae_lambda);
    }
    EpochRecord rec{round, 0.0, steps ? reward / static_cast<double>(steps) : 0.0, 0};
    // Policy update with a KL early-stop guard against the rollout policy.
    const double scale = 1.0 / static_cast<double>(traj.size());
    for (std::size_t e = 0; e < config.ppo_policy_epochs; ++e) {
      const EffectiveWeights eff(p);
      grad.set_zero();
      std::vector<double> kls(traj.size());
      const double loss = parallel::accumulate(
          traj.size(), grad,
          [&](std::size_t i, Gradient& g) {
            const auto t = clip_trajectory(p, eff, traj[i], config.loss.clip_epsilon, scale, &g);
            kls[i] = t.approx_kl;
            return t.loss;
          },
          config.workers);
      check_finite(loss, "ppo", p, round);
      const double kl = std::accumulate(kls.begin(), kls.end(), 0.0) / static_cast<double>(std::max<std::size_t>(steps, 1));
      if (e == 0) rec.loss = loss;
      if (e > 0 && kl > config.ppo_kl_guard) break;
      check_finite(opt.step(p, grad), "ppo", p, round);
      ++rec.steps;
    }
    // Value fit towards the constant GAE targets.
    std::vector<std::vector<double>> fx;
    std::vector<sampling::Step> st;
    for (std::size_t d = 0; d < traj.size(); ++d)
      for (std::size_t i = 0; i < traj[d].steps.size(); ++i) {
        fx.push_back(feats[d][i]);
        st.push_back(traj[d].steps[i]);
      }
    for (std::size_t e = 0; e < config.value_epochs; ++e) {
      std::vector<double> g(vm.w.size(), 0.0);
      const double vl = value_loss(vm, fx, st, &g);
      if (!std::isfinite(vl) || vl > 1e6)
        throw policy::TrainingDiverged("ppo: value model diverged in round " + std::to_string(round), p, round);
      ++vm_t;
      const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(vm_t));
      const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(vm_t));
      for (std::size_t i = 0; i < vm.w.size(); ++i) {
        vm_m[i] = 0.9 * vm_m[i] + 0.1 * g[i];
        vm_v[i] = 0.999 * vm_v[i] + 0.001 * g[i] * g[i];
        vm.w[i] -= config.value_lr * (vm_m[i] / bc1) / (std::sqrt(vm_v[i] / bc2) + 1e-8);
      }
    }
    out.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, p);
  }
  return out;
}

}  // namespace sspo::align
