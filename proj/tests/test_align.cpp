// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "sspo/align.hpp"
#include "support.hpp"

using namespace sspo;
using namespace sspo::align;
using policy::Gradient;
using policy::PolicyParams;
using sspo::testing::directional_error;
using sspo::testing::random_params;
using sspo::testing::tiny_task;

namespace {

const double kLn2 = std::log(2.0);

TokenSeq random_words(Rng& rng, std::size_t max_len) {
  const auto& v = tiny_task().vocab;
  TokenSeq out(rng.below(max_len + 1));
  for (auto& t : out) t = static_cast<TokenId>(special::count + rng.below(v.size() - special::count));
  return out;
}

PreferencePair random_pair(Rng& rng) {
  const auto c = testing::random_segment_case(rng);
  PreferencePair p;
  p.prefix = c.prefix;
  p.chosen = random_words(rng, 3);
  do {
    p.rejected = random_words(rng, 3);
  } while (p.rejected == p.chosen);
  return p;
}

/// Three parameter shapes: full, adapters over a frozen base, adapters with a
/// trainable base.
PolicyParams params_for(int mode, std::uint64_t seed) {
  if (mode == 0) return random_params(seed);
  return random_params(seed, true, mode == 1);
}

Gradient random_direction(const PolicyParams& p, Rng& rng) {
  Gradient d = Gradient::zeros_like(p);
  if (!p.freeze_base)
    for (double& x : d.base) x = rng.normal();
  for (double& x : d.adapters) x = rng.normal();
  return d;
}

PolicyParams moved(const PolicyParams& p, const Gradient& d, double h) {
  PolicyParams q = p;
  for (std::size_t i = 0; i < d.base.size(); ++i) q.base[i] += h * d.base[i];
  for (std::size_t i = 0; i < d.adapters.size(); ++i) q.adapters[i] += h * d.adapters[i];
  return q;
}

/// Directional finite-difference check of `loss` at `p`.
double fd_error(const PolicyParams& p, Rng& rng, const std::function<LossGrad(const PolicyParams&)>& loss) {
  const auto g = loss(p);
  const auto d = random_direction(p, rng);
  return directional_error([&](double h) { return loss(moved(p, d, h)).value; }, g.grad.dot(d));
}

corpus::Document three_line_doc(std::size_t index = 0) { return tiny_task().split.demonstration.at(index); }

std::vector<TokenSeq> random_targets(Rng& rng, const corpus::Document& doc) {
  std::vector<TokenSeq> t;
  for (std::size_t i = 0; i < doc.lines.size(); ++i) t.push_back(random_words(rng, 3));
  return t;
}

ResponsePair random_response_pair(Rng& rng) {
  const auto doc = three_line_doc(rng.below(10));
  ResponsePair r;
  r.prompt_id = doc.prompt_id;
  r.prompt = corpus::encode_prompt(doc);
  r.chosen = sampling::assemble_response(doc, random_targets(rng, doc));
  r.rejected = sampling::assemble_response(doc, random_targets(rng, doc));
  return r;
}

// O(n^2) restatement of the advantage sum.
std::vector<double> brute_gae(const std::vector<double>& r, const std::vector<double>& v, double g, double l) {
  const std::size_t n = r.size();
  std::vector<double> delta(n), adv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) delta[i] = r[i] + g * (i + 1 < n ? v[i + 1] : 0.0) - v[i];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; i + k < n; ++k) adv[i] += std::pow(g * l, static_cast<double>(k)) * delta[i + k];
  return adv;
}

sampling::Trajectory random_trajectory(Rng& rng, std::size_t n) {
  sampling::Trajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    sampling::Step s;
    s.reward = -rng.uniform(0.0, 1.0);
    s.value = rng.normal();
    t.steps.push_back(s);
  }
  return t;
}

/// Rollouts from a tiny random policy with advantages and rollout log-probs
/// perturbed so that some ratios land outside the clip range.
std::vector<sampling::Trajectory> random_rollouts(const PolicyParams& p, Rng& rng, std::size_t docs) {
  const auto& task = tiny_task();
  const sampling::QualityOracle q(task.key, task.vocab);
  const sampling::Oracles o{&task.vocab, &task.durations, &q};
  sampling::SamplingConfig c;
  c.sampler.max_segment_tokens = 3;
  std::vector<corpus::Document> query(task.split.demonstration.begin(), task.split.demonstration.begin() + docs);
  auto tr = sampling::ppo_rollout(p, query, c, o, {}, rng.next_u64());
  for (auto& t : tr)
    for (auto& s : t.steps) {
      s.advantage = rng.normal();
      s.old_logprob += 0.3 * rng.normal();
    }
  return tr;
}

}  // namespace

TEST_CASE("format control names") {
  for (auto f : {FormatControl::none, FormatControl::tkld, FormatControl::low_rank})
    CHECK(format_control_from(to_string(f)) == f);
  CHECK_THROWS_AS(format_control_from("lora"), Error);
}

TEST_CASE("losses at theta = ref") {
  Rng rng(1);
  for (int mode = 0; mode < 3; ++mode) {
    const auto p = params_for(mode, 10 + mode);
    for (int i = 0; i < 10; ++i) {
      const auto pair = random_pair(rng);
      CHECK(std::abs(dpo_segment_loss(p, p, pair, 0.5).value - kLn2) < 1e-9);
      CHECK(segment_contrast(p, p, pair) == 0.0);
      const auto rp = random_response_pair(rng);
      CHECK(std::abs(dpo_response_loss(p, p, rp, 0.5).value - kLn2) < 1e-9);
      const TokenSpan span{pair.prefix, sampling::segment_tokens(pair.chosen)};
      CHECK(tkld_penalty(p, p, std::span(&span, 1), 1e-4).value == 0.0);
      for (double kl : token_kl(p, p, span)) CHECK(kl == 0.0);
    }
    std::vector<PreferencePair> pairs;
    for (int i = 0; i < 7; ++i) pairs.push_back(random_pair(rng));
    std::vector<const PreferencePair*> batch;
    for (const auto& x : pairs) batch.push_back(&x);
    LossConfig cfg;
    CHECK(std::abs(sspo_loss(p, p, batch, cfg).value - kLn2) < 1e-9);
    CHECK(std::abs(sspo_loss(p, p, batch, cfg, true).value - kLn2) < 1e-9);
  }
}

TEST_CASE("sspo loss of one pair equals the segment loss; empty batch is an error") {
  Rng rng(2);
  const auto p = random_params(3), ref = random_params(4);
  const auto pair = random_pair(rng);
  const PreferencePair* one[] = {&pair};
  LossConfig cfg;
  const auto a = sspo_loss(p, ref, one, cfg);
  const auto b = dpo_segment_loss(p, ref, pair, cfg.beta);
  CHECK(std::abs(a.value - b.value) < 1e-12);
  CHECK(std::abs(a.grad.dot(a.grad) - b.grad.dot(b.grad)) < 1e-12);
  try {
    (void)sspo_loss(p, ref, std::span<const PreferencePair* const>{}, cfg);
    FAIL("expected empty-input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::empty_input);
  }
}

TEST_CASE("loss is -log sigmoid(beta * contrast)") {
  Rng rng(3);
  const auto p = random_params(5), ref = random_params(6);
  for (int i = 0; i < 20; ++i) {
    const auto pair = random_pair(rng);
    const double h = segment_contrast(p, ref, pair);
    for (double beta : {0.1, 0.5, 1.0}) {
      const double expect = std::log1p(std::exp(-beta * h));
      CHECK(std::abs(dpo_segment_loss(p, ref, pair, beta).value - expect) < 1e-9);
      const double doubled = std::log1p(std::exp(-2.0 * beta * h));
      CHECK(std::abs(dpo_segment_loss(p, ref, pair, 2.0 * beta).value - doubled) < 1e-9);
    }
  }
}

TEST_CASE("gradient at theta = ref raises the chosen and lowers the rejected segment") {
  Rng rng(4);
  for (int mode = 0; mode < 3; ++mode) {
    const auto p = params_for(mode, 20 + mode);
    for (int i = 0; i < 10; ++i) {
      const auto pair = random_pair(rng);
      const auto g = dpo_segment_loss(p, p, pair, 0.5);
      Gradient step = g.grad;
      step *= -1e-3;
      const auto q = moved(p, step, 1.0);
      const auto c = sampling::segment_tokens(pair.chosen), r = sampling::segment_tokens(pair.rejected);
      CHECK(policy::segment_logprob(q, pair.prefix, c) > policy::segment_logprob(p, pair.prefix, c));
      CHECK(policy::segment_logprob(q, pair.prefix, r) < policy::segment_logprob(p, pair.prefix, r));
    }
  }
}

TEST_CASE("one small gradient step decreases a pair's loss") {
  Rng rng(5);
  const auto ref = random_params(7);
  for (int i = 0; i < 20; ++i) {
    const auto p = params_for(i % 3, 30 + i);
    const auto pair = random_pair(rng);
    const auto g = dpo_segment_loss(p, ref, pair, 0.5);
    bool decreased = false;
    for (double eta = 1e-1; eta > 1e-7 && !decreased; eta *= 0.1)
      decreased = dpo_segment_loss(moved(p, g.grad, -eta), ref, pair, 0.5).value < g.value;
    CHECK(decreased);
  }
}

TEST_CASE("finite-difference gradients of every loss") {
  Rng rng(6);
  const auto ref = random_params(8);
  constexpr int kInstances = 50;
  double worst_seg = 0, worst_sspo = 0, worst_tkld = 0, worst_resp = 0, worst_ppo = 0;
  for (int i = 0; i < kInstances; ++i) {
    const auto p = params_for(i % 3, 100 + i);
    const double beta = rng.uniform(0.1, 2.0);
    const auto pair = random_pair(rng);
    worst_seg = std::max(worst_seg, fd_error(p, rng, [&](const PolicyParams& x) {
                           return dpo_segment_loss(x, ref, pair, beta);
                         }));

    std::vector<PreferencePair> pairs;
    for (int j = 0; j < 3; ++j) pairs.push_back(random_pair(rng));
    std::vector<const PreferencePair*> batch;
    for (const auto& x : pairs) batch.push_back(&x);
    LossConfig cfg;
    cfg.beta = beta;
    cfg.lambda_tkld = 0.3;  // large enough to matter in the check
    worst_sspo = std::max(worst_sspo, fd_error(p, rng, [&](const PolicyParams& x) {
                            return sspo_loss(x, ref, batch, cfg, true, 2);
                          }));

    const TokenSpan spans[] = {{pair.prefix, sampling::segment_tokens(pair.chosen)},
                               {pairs[0].prefix, sampling::segment_tokens(pairs[0].rejected)}};
    worst_tkld = std::max(worst_tkld, fd_error(p, rng, [&](const PolicyParams& x) {
                            return tkld_penalty(x, ref, spans, 0.7);
                          }));

    const auto rp = random_response_pair(rng);
    worst_resp = std::max(worst_resp, fd_error(p, rng, [&](const PolicyParams& x) {
                            return dpo_response_loss(x, ref, rp, beta);
                          }));

    const auto tr = random_rollouts(p, rng, 2);
    worst_ppo = std::max(worst_ppo, fd_error(p, rng, [&](const PolicyParams& x) {
                           return ppo_clip_loss(x, tr, 0.2, 2);
                         }));
  }
  CHECK(worst_seg <= 1e-4);
  CHECK(worst_sspo <= 1e-4);
  CHECK(worst_tkld <= 1e-4);
  CHECK(worst_resp <= 1e-4);
  CHECK(worst_ppo <= 1e-4);
  MESSAGE("max rel err: seg " << worst_seg << " sspo " << worst_sspo << " tkld " << worst_tkld << " resp "
                              << worst_resp << " ppo " << worst_ppo);
}

TEST_CASE("token KL is non-negative and sums to the penalty") {
  Rng rng(7);
  const auto p = random_params(9), ref = random_params(10);
  for (int i = 0; i < 20; ++i) {
    const auto pair = random_pair(rng);
    const TokenSpan span{pair.prefix, sampling::segment_tokens(pair.chosen)};
    double sum = 0.0;
    for (double kl : token_kl(p, ref, span)) {
      CHECK(kl >= 0.0);
      sum += kl;
    }
    CHECK(std::abs(tkld_penalty(p, ref, std::span(&span, 1), 2.0).value - 2.0 * sum) < 1e-9);
  }
}

TEST_CASE("GAE matches the brute-force sum") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto t = random_trajectory(rng, 1 + rng.below(20));
    const double g = rng.uniform(0.5, 1.0), l = rng.uniform(0.0, 1.0);
    std::vector<double> r, v;
    for (const auto& s : t.steps) r.push_back(s.reward), v.push_back(s.value);
    gae_advantages(t, g, l);
    const auto expect = brute_gae(r, v, g, l);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(t.steps[i].advantage - expect[i]) < 1e-10);
  }
}

TEST_CASE("GAE identities") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto t = random_trajectory(rng, 1 + rng.below(15));
    gae_advantages(t, 1.0, 1.0);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      double tail = 0.0;
      for (std::size_t j = i; j < t.steps.size(); ++j) tail += t.steps[j].reward;
      CHECK(std::abs(t.steps[i].advantage - (tail - t.steps[i].value)) < 1e-10);
    }
  }
  auto z = random_trajectory(rng, 10);
  for (auto& s : z.steps) s.reward = s.value = 0.0;
  gae_advantages(z, 0.99, 0.95);
  for (const auto& s : z.steps) CHECK(s.advantage == 0.0);
  // Three steps written out by hand.
  sampling::Trajectory h;
  for (auto [r, v] : {std::pair{-0.2, 0.5}, std::pair{-0.1, -0.3}, std::pair{-0.4, 0.2}}) {
    sampling::Step s;
    s.reward = r;
    s.value = v;
    h.steps.push_back(s);
  }
  gae_advantages(h, 0.9, 0.8);
  const double d2 = -0.4 - 0.2, d1 = -0.1 + 0.9 * 0.2 + 0.3, d0 = -0.2 + 0.9 * -0.3 - 0.5;
  CHECK(std::abs(h.steps[2].advantage - d2) < 1e-12);
  CHECK(std::abs(h.steps[1].advantage - (d1 + 0.72 * d2)) < 1e-12);
  CHECK(std::abs(h.steps[0].advantage - (d0 + 0.72 * d1 + 0.72 * 0.72 * d2)) < 1e-12);
}

TEST_CASE("clipped objective examples") {
  const auto p = random_params(11);
  Rng rng(10);
  auto tr = random_rollouts(p, rng, 1);
  REQUIRE(tr.size() == 1);
  auto& t = tr[0];
  t.steps.resize(1);
  const double logp = policy::segment_logprob(p, t.steps[0].prefix, sampling::segment_tokens(t.steps[0].action));
  auto loss_with = [&](double rho, double A) {
    t.steps[0].old_logprob = logp - std::log(rho);
    t.steps[0].advantage = A;
    return ppo_clip_loss(p, tr, 0.2);
  };
  SUBCASE("theta = old gives -sum A") {
    const auto l = loss_with(1.0, 0.7);
    CHECK(std::abs(l.value + 0.7) < 1e-9);
  }
  SUBCASE("rho 1.5, A > 0: clipped at 1.2 A with no gradient") {
    const auto l = loss_with(1.5, 0.4);
    CHECK(std::abs(l.value + 1.2 * 0.4) < 1e-9);
    CHECK(l.grad.dot(l.grad) == 0.0);
  }
  SUBCASE("A < 0, large rho: the unclipped term is the minimum") {
    const auto l = loss_with(3.0, -0.5);
    CHECK(std::abs(l.value - 3.0 * 0.5) < 1e-9);
    CHECK(l.grad.dot(l.grad) > 0.0);
  }
  SUBCASE("A < 0, rho near 0: the clipped term is the minimum") {
    const auto l = loss_with(1e-6, -0.5);
    CHECK(std::abs(l.value - 0.8 * 0.5) < 1e-9);
    CHECK(l.grad.dot(l.grad) == 0.0);
  }
  SUBCASE("zero advantages give zero gradient") {
    const auto l = loss_with(1.1, 0.0);
    CHECK(l.value == 0.0);
    CHECK(l.grad.dot(l.grad) == 0.0);
  }
}

TEST_CASE("value loss") {
  const auto vm = ValueModel::init(5, 4, 3);
  const std::vector<std::vector<double>> x{{0.1, -0.2, 0.3, 0.5, -1.0}};
  sampling::Step s;
  s.value = vm.predict(x[0]);
  s.advantage = 0.3;
  CHECK(std::abs(value_loss(vm, x, std::span(&s, 1)) - 0.09) < 1e-12);
  s.advantage = 0.0;
  CHECK(value_loss(vm, x, std::span(&s, 1)) == 0.0);

  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto m = ValueModel::init(6, 5, trial);
    std::vector<std::vector<double>> f(1 + rng.below(6), std::vector<double>(6));
    std::vector<sampling::Step> st(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (double& v : f[i]) v = rng.normal();
      st[i].value = rng.normal();
      st[i].advantage = rng.normal();
    }
    std::vector<double> g(m.w.size(), 0.0);
    (void)value_loss(m, f, st, &g);
    std::vector<double> d(m.w.size());
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) analytic += g[i] * (d[i] = rng.normal());
    worst = std::max(worst, directional_error(
                                [&](double h) {
                                  auto q = m;
                                  for (std::size_t i = 0; i < d.size(); ++i) q.w[i] += h * d[i];
                                  return value_loss(q, f, st);
                                },
                                analytic));
  }
  CHECK(worst <= 1e-4);
  try {
    (void)value_loss(vm, x, std::span<const sampling::Step>{});
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
}

TEST_CASE("segment factorization of the response log-ratio") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = params_for(trial % 3, 200 + trial), ref = random_params(300 + trial);
    const auto doc = three_line_doc(rng.below(10));
    REQUIRE(doc.lines.size() == 3);
    const auto prompt = corpus::encode_prompt(doc);
    const auto targets = random_targets(rng, doc);
    const double direct = response_segment_logratio(p, ref, prompt, doc, targets);
    const double split = per_segment_logratio(p, ref, prompt, doc, targets);
    CHECK(std::abs(direct - split) < 1e-9);
  }
}

TEST_CASE("vanilla contrast mixes prefixes, segment contrast does not") {
  Rng rng(13);
  const auto p = random_params(14), ref = random_params(15);
  const auto doc = three_line_doc(2);
  const auto prompt = corpus::encode_prompt(doc);
  const auto w = random_targets(rng, doc);
  auto l = random_targets(rng, doc);
  for (auto& t : l) t.push_back(static_cast<TokenId>(special::count));  // differs from w everywhere
  const auto vanilla = vanilla_contrast(p, ref, prompt, doc, w, l);
  const auto sspo = segment_contrast_terms(p, ref, prompt, doc, w, l);

  // Whole-response DPO contrast equals the vanilla segment sum.
  const double full = response_segment_logratio(p, ref, prompt, doc, w) - response_segment_logratio(p, ref, prompt, doc, l);
  CHECK(std::abs(vanilla.total() - full) < 1e-9);

  // Each segment-supervised rejected term sits on the chosen prefix.
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    const auto pw = sampling::line_prefix(prompt, doc, w, i);
    const auto seg_r = sampling::segment_tokens(l[i]);
    const double on_chosen =
        (policy::segment_logprob(p, pw, seg_r) - policy::segment_logprob(ref, pw, seg_r));
    CHECK(std::abs(sspo.rejected[i] - on_chosen) < 1e-9);
    CHECK(std::abs(sspo.chosen[i] - vanilla.chosen[i]) < 1e-12);
  }
  // The first line shares its prefix; later vanilla rejected terms see y^l prefixes.
  CHECK(std::abs(vanilla.rejected[0] - sspo.rejected[0]) < 1e-12);
  CHECK(sampling::line_prefix(prompt, doc, w, 1) != sampling::line_prefix(prompt, doc, l, 1));
  CHECK(std::abs(vanilla.rejected[1] - sspo.rejected[1]) > 1e-6);
  CHECK(std::abs(vanilla.rejected[2] - sspo.rejected[2]) > 1e-6);
}

TEST_CASE("trainers leave the reference and a frozen base untouched") {
  const auto& task = tiny_task();
  const sampling::QualityOracle q(task.key, task.vocab);
  const sampling::Oracles o{&task.vocab, &task.durations, &q};
  const auto sft = random_params(16);
  const auto sft_copy = sft;
  std::vector<corpus::Document> query(task.split.demonstration.begin(), task.split.demonstration.begin() + 6);
  sampling::SamplingConfig sc;
  sc.k = 10;
  sc.sampler.max_segment_tokens = 5;
  const auto data = sampling::sspo_sample(sft, query, sc, o, 3);
  REQUIRE(data.retained() > 0);

  AlignConfig cfg;
  cfg.loss.epochs = 2;
  cfg.loss.batch_lines = 4;
  std::size_t calls = 0;
  const auto lr = train_sspo(sft, data, cfg, [&](const EpochRecord& r, const PolicyParams&) {
    CHECK(r.epoch == calls++);
    CHECK(std::isfinite(r.loss));
  });
  CHECK(calls == 2);
  CHECK(sft == sft_copy);
  CHECK(lr.params.base == sft.base);  // bitwise
  CHECK(lr.params.freeze_base);
  CHECK(lr.params.has_adapters());
  CHECK(lr.epochs.size() == 2);
  CHECK(lr.epochs[0].loss < kLn2 + 1e-9);

  cfg.loss.format_control = FormatControl::none;
  const auto full = train_sspo(sft, data, cfg);
  CHECK(!full.params.has_adapters());
  CHECK(full.params.base != sft.base);

  cfg.loss.format_control = FormatControl::tkld;
  const auto tk = train_sspo(sft, data, cfg);
  CHECK(tk.epochs.back().extra > 0.0);
  CHECK(sft == sft_copy);

  // Training is deterministic across worker counts.
  cfg.loss.format_control = FormatControl::low_rank;
  cfg.workers = 3;
  CHECK(train_sspo(sft, data, cfg).params.adapters == lr.params.adapters);
}

TEST_CASE("zero-work trainers return pi_sft unchanged") {
  const auto& task = tiny_task();
  const sampling::QualityOracle q(task.key, task.vocab);
  const sampling::Oracles o{&task.vocab, &task.durations, &q};
  const auto sft = random_params(17);
  std::vector<corpus::Document> query(task.split.demonstration.begin(), task.split.demonstration.begin() + 3);
  sampling::SamplingConfig sc;
  sc.k = 6;
  const auto data = sampling::sspo_sample(sft, query, sc, o, 4);

  AlignConfig cfg;
  cfg.loss.epochs = 0;
  CHECK(train_sspo(sft, data, cfg).params == sft);
  cfg.loss.epochs = 4;
  CHECK(train_sspo(sft, SampledDataset{}, cfg).params == sft);
  CHECK(train_dpo_vanilla(sft, ResponsePairSet{}, cfg).params == sft);
  cfg.ppo_rounds = 0;
  CHECK(train_ppo(sft, query, sc, o, cfg).params == sft);
}

TEST_CASE("vanilla DPO starts at ln 2 and PPO runs its rounds") {
  const auto& task = tiny_task();
  const sampling::QualityOracle q(task.key, task.vocab);
  const sampling::Oracles o{&task.vocab, &task.durations, &q};
  const auto sft = random_params(18);
  std::vector<corpus::Document> query(task.split.demonstration.begin(), task.split.demonstration.begin() + 4);
  sampling::SamplingConfig sc;
  sc.k = 6;
  sc.sampler.max_segment_tokens = 4;
  const auto fine = sampling::fine_sample(sft, query, sc, o, 5);
  REQUIRE(!fine.pairs.empty());
  for (const auto& pr : fine.pairs) CHECK(std::abs(dpo_response_loss(sft, sft, pr, 0.5).value - kLn2) < 1e-9);
  AlignConfig cfg;
  cfg.loss.epochs = 1;
  const auto d = train_dpo_vanilla(sft, fine, cfg);
  REQUIRE(d.epochs.size() == 1);
  CHECK(std::abs(d.epochs[0].loss - kLn2) < 0.05);

  cfg.ppo_rounds = 2;
  cfg.value_epochs = 5;
  const auto ppo = train_ppo(sft, query, sc, o, cfg);
  CHECK(ppo.epochs.size() == 2);
  CHECK(ppo.params.base == sft.base);
  CHECK(ppo.params.adapters != std::vector<double>(ppo.params.adapters.size(), 0.0));
  for (const auto& r : ppo.epochs) CHECK(r.extra <= 0.0);
}
