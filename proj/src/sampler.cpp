// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sspo::policy {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0)) fail(ErrorKind::config, "sampler: temperature must be positive");
  if (top_k < 1) fail(ErrorKind::config, "sampler: top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) fail(ErrorKind::config, "sampler: top_p must be in (0, 1]");
  if (max_segment_tokens < 1) fail(ErrorKind::config, "sampler: max_segment_tokens must be >= 1");
}

TokenMask segment_mask(const Vocabulary& vocab) {
  TokenMask m(vocab.size(), false);
  for (std::size_t i = 0; i < vocab.size(); ++i) m[i] = vocab.is_word(static_cast<TokenId>(i));
  m[special::close] = true;
  return m;
}

std::vector<double> sampling_distribution(std::span<const double> logits, const SamplerConfig& config,
                                          const TokenMask& mask) {
  const std::size_t V = logits.size();
  auto allowed = [&](std::size_t i) { return mask.empty() || mask[i]; };
  std::vector<double> p(V, 0.0);
  if (config.greedy) {
    std::size_t best = V;
    for (std::size_t i = 0; i < V; ++i)
      if (allowed(i) && (best == V || logits[i] > logits[best])) best = i;
    if (best == V) fail(ErrorKind::domain, "sampler: mask excludes every token");
    p[best] = 1.0;
    return p;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < V; ++i)
    if (allowed(i)) idx.push_back(i);
  if (idx.empty()) fail(ErrorKind::domain, "sampler: mask excludes every token");
  // Stable order: descending logit, then ascending id.
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  if (idx.size() > config.top_k) idx.resize(config.top_k);
  const double mx = logits[idx.front()];
  double z = 0.0;
  for (std::size_t i : idx) {
    p[i] = std::exp((logits[i] - mx) / config.temperature);
    z += p[i];
  }
  for (std::size_t i : idx) p[i] /= z;
  if (config.top_p < 1.0) {
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < idx.size()) {
      cum += p[idx[keep]];
      ++keep;
      if (cum >= config.top_p) break;
    }
    double z2 = 0.0;
    for (std::size_t j = 0; j < keep; ++j) z2 += p[idx[j]];
    for (std::size_t j = 0; j < idx.size(); ++j) p[idx[j]] = j < keep ? p[idx[j]] / z2 : 0.0;
  }
  return p;
}

TokenId draw_token(std::span<const double> logits, const SamplerConfig& config, Rng& rng, const TokenMask& mask) {
  const auto p = sampling_distribution(logits, config, mask);
  if (config.greedy) return static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cum += p[i];
    last = i;
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last);
}

SampledTokens sample_until(const Decoder& decoder, DecodeState& state, const SamplerConfig& config, Rng& rng,
                           TokenId terminator, std::size_t max_tokens, const TokenMask& mask) {
  SampledTokens out;
  if (state.last_logits.empty()) fail(ErrorKind::shape, "sampler: decoder state has no logits");
  while (out.tokens.size() < max_tokens) {
    const TokenId t = draw_token(state.last_logits, config, rng, mask);
    decoder.push(state, t);
    if (t == terminator) {
      out.terminated = true;
      return out;
    }
    out.tokens.push_back(t);
  }
  return out;
}

SampledTokens sample_segment(const PolicyParams& params, const TokenSeq& prefix, const SamplerConfig& config,
                             std::uint64_t seed) {
  config.validate();
  const Decoder dec(params);
  DecodeState st = dec.start(prefix);
  Rng rng(seed);
  return sample_until(dec, st, config, rng, special::close, config.max_segment_tokens, segment_mask(*params.vocab));
}

SampledTokens generate_response(const Decoder& decoder, const TokenSeq& prompt, const SamplerConfig& config,
                                Rng& rng, std::size_t max_tokens) {
  DecodeState st = decoder.start(prompt);
  const std::size_t budget = std::min(max_tokens, decoder.weights().config.context_window - prompt.size());
  return sample_until(decoder, st, config, rng, special::eos, budget);
}

}  // namespace sspo::policy
