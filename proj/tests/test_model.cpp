// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sspo/model.hpp"
#include "support.hpp"

using namespace sspo;
using namespace sspo::policy;
using sspo::testing::random_params;
using sspo::testing::tiny_task;
using sspo::testing::tiny_vocab;

namespace {

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

}  // namespace

TEST_CASE("structure tracker aligns echoes and targets with prompt slots") {
  const auto& task = tiny_task();
  const auto& doc = task.split.demonstration.front();
  TokenSeq ids = corpus::encode_prompt(doc);
  const std::size_t prompt_len = ids.size();
  const auto resp = corpus::encode_reference_response(doc);
  ids.insert(ids.end(), resp.begin(), resp.end());
  StructureTracker tr(&task.vocab.classes(), 16, 12);
  std::vector<Position> pos;
  for (TokenId t : ids) pos.push_back(tr.push(t));

  // Prompt source word j of line l sits at (l, j).
  std::size_t i = 0;
  while (ids[i] != special::lines) ++i;
  ++i;
  for (std::size_t l = 0; l < doc.lines.size(); ++l) {
    for (std::size_t j = 0; j < doc.lines[l].source.size(); ++j, ++i) {
      CHECK(pos[i].role == static_cast<int>(Role::prompt_source));
      CHECK(pos[i].line == static_cast<int>(l));
      CHECK(pos[i].slot == static_cast<int>(j));
    }
    CHECK(pos[i].role == static_cast<int>(Role::prompt_sep));
    CHECK(pos[i].slot == static_cast<int>(doc.lines[l].source.size()));
    ++i;
  }
  CHECK(pos[prompt_len - 1].role == static_cast<int>(Role::answer));
  CHECK(pos[prompt_len - 1].line == static_cast<int>(doc.lines.size()));

  // After echoing j source words the query slot equals j.
  std::size_t k = prompt_len;
  for (std::size_t j = 0; j < doc.lines[0].source.size(); ++j, ++k) {
    CHECK(pos[k].role == static_cast<int>(Role::response_source));
    CHECK(pos[k].slot == static_cast<int>(j + 1));
  }
  CHECK(pos[k].role == static_cast<int>(Role::open));
  CHECK(pos.back().role == static_cast<int>(Role::eos));
}

TEST_CASE("incremental decoding reproduces full forward logits") {
  const auto p = random_params(3, true, true);
  const auto& doc = tiny_task().split.demonstration[1];
  TokenSeq ids = corpus::encode_prompt(doc);
  const auto resp = corpus::encode_reference_response(doc);
  ids.insert(ids.end(), resp.begin(), resp.end());
  std::vector<std::size_t> outs(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) outs[i] = i;
  const EffectiveWeights eff(p);
  const ForwardPass fp(eff, ids, outs);
  const Decoder dec(p);
  DecodeState st = dec.start({});
  double worst = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    dec.push(st, ids[i]);
    const auto full = fp.logits(i);
    for (std::size_t v = 0; v < full.size(); ++v) worst = std::max(worst, std::abs(full[v] - st.last_logits[v]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("softmax rows sum to one") {
  const auto p = random_params(4);
  const auto c = sspo::testing::random_segment_case(*std::make_unique<Rng>(9));
  TokenSeq ids = c.prefix;
  ids.insert(ids.end(), c.segment.begin(), c.segment.end());
  std::vector<std::size_t> outs(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) outs[i] = i;
  const EffectiveWeights eff(p);
  const ForwardPass fp(eff, ids, outs);
  std::vector<double> ls(p.config.vocab_size);
  for (std::size_t r = 0; r < fp.rows(); ++r) {
    log_softmax(fp.logits(r), ls);
    double s = 0.0;
    for (double x : ls) s += std::exp(x);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("empty segment has zero log-probability and gradient") {
  const auto p = random_params(5, true, false);
  const auto g = segment_logprob_grad(p, {special::bos}, {});
  CHECK(g.value == 0.0);
  CHECK(g.grad.dot(g.grad) == 0.0);
}

TEST_CASE("zero output projection gives log-probability -ln V") {
  auto cfg = sspo::testing::tiny_model_config();
  const auto p = init_params(cfg, tiny_vocab(), 1, InitScheme::uniform_output);
  const double lp = segment_logprob(p, {special::bos, special::task}, {special::count});
  CHECK(lp == doctest::Approx(-std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-12));
}

TEST_CASE("segment log-prob gradient matches central differences") {
  Rng rng(2024);
  int checked = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int mode = inst % 3;  // full, adapters on frozen base, adapters + base
    const auto p = random_params(100 + inst, mode != 0, mode == 1);
    const auto c = sspo::testing::random_segment_case(rng);
    const auto g = segment_logprob_grad(p, c.prefix, c.segment);
    CHECK(g.value == doctest::Approx(segment_logprob(p, c.prefix, c.segment)).epsilon(1e-12));
    const Gradient d = random_direction(p, rng);
    const double err = sspo::testing::directional_error(
        [&](double h) { return segment_logprob(moved(p, d, h), c.prefix, c.segment); }, g.grad.dot(d));
    CHECK(err <= 1e-4);
    if (mode == 1) CHECK(g.grad.base == std::vector<double>(p.base.size(), 0.0));
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("coordinate-wise gradient check on embeddings and adapters") {
  Rng rng(77);
  const auto p = random_params(7, true, false);
  const auto c = sspo::testing::random_segment_case(rng);
  const auto g = segment_logprob_grad(p, c.prefix, c.segment);
  const double h = 1e-5;
  double num2 = 0.0, diff2 = 0.0;
  for (int t = 0; t < 40; ++t) {
    const bool adapter = t % 2 == 1;
    const std::size_t n = adapter ? p.adapters.size() : p.base.size();
    const std::size_t i = rng.below(n);
    PolicyParams a = p, b = p;
    (adapter ? a.adapters : a.base)[i] += h;
    (adapter ? b.adapters : b.base)[i] -= h;
    const double num = (segment_logprob(a, c.prefix, c.segment) - segment_logprob(b, c.prefix, c.segment)) / (2 * h);
    const double ana = (adapter ? g.grad.adapters : g.grad.base)[i];
    num2 += num * num + ana * ana;
    diff2 += (num - ana) * (num - ana);
  }
  CHECK(std::sqrt(diff2) <= 1e-4 * std::sqrt(num2) + 1e-12);
}

TEST_CASE("autoregressive factorization of segment log-probabilities") {
  Rng rng(11);
  const auto p = random_params(8);
  for (int t = 0; t < 10; ++t) {
    const auto c = sspo::testing::random_segment_case(rng);
    const TokenSeq a(c.segment.begin(), c.segment.begin() + 1);
    const TokenSeq b(c.segment.begin() + 1, c.segment.end());
    TokenSeq pa = c.prefix;
    pa.insert(pa.end(), a.begin(), a.end());
    const double whole = segment_logprob(p, c.prefix, c.segment);
    CHECK(whole == doctest::Approx(segment_logprob(p, c.prefix, a) + segment_logprob(p, pa, b)).epsilon(1e-12));
  }
}

TEST_CASE("adapters with zero B leave the forward pass unchanged") {
  auto p = random_params(9);
  const auto base = p;
  attach_adapters(p, 4);
  const EffectiveWeights e0(base), e1(p);
  CHECK(e0.w == e1.w);
  const auto merged = merge_adapter(p);
  CHECK(merged.base == base.base);
}

TEST_CASE("merging random adapters preserves the forward pass") {
  const auto p = random_params(10, true, true);
  const auto merged = merge_adapter(p);
  CHECK_FALSE(merged.has_adapters());
  Rng rng(3);
  const auto c = sspo::testing::random_segment_case(rng);
  CHECK(std::abs(segment_logprob(p, c.prefix, c.segment) - segment_logprob(merged, c.prefix, c.segment)) <= 1e-6);
  // effective update is (alpha / r) A B
  const Layout L(p.config);
  const auto& off = L.adapters[0][0];
  const std::size_t d = p.config.d_model, r = p.config.lora_rank;
  double expect = p.base[L.layers[0].wq + 1];
  for (std::size_t j = 0; j < r; ++j) expect += p.config.lora_scale() * p.adapters[off.a + j] * p.adapters[off.b + j * d + 1];
  CHECK(merged.base[L.layers[0].wq + 1] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("default adapter scale follows rank 16 and alpha 32") {
  const ModelConfig c;
  CHECK(c.lora_rank == 16);
  CHECK(c.lora_scale() == 2.0);
}

TEST_CASE("context overflow raises a capacity error") {
  const auto p = random_params(12);
  TokenSeq prefix(p.config.context_window, special::task);
  prefix[0] = special::bos;
  try {
    segment_logprob(p, prefix, {special::close});
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::capacity);
  }
}
