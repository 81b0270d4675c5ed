// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sspo/model.hpp"
#include "sspo/rng.hpp"

namespace sspo::policy {

struct SamplerConfig {
  double temperature = 1.4;
  std::size_t top_k = 60;
  double top_p = 0.95;
  std::size_t max_segment_tokens = 16;
  bool greedy = false;  // argmax decoding; ignores the other knobs

  void validate() const;
};

/// Allowed-token mask; empty means every token is allowed.
using TokenMask = std::vector<bool>;

/// Words plus ")" : the alphabet of a target segment.
TokenMask segment_mask(const Vocabulary& vocab);

/// Probabilities after temperature scaling, top-k truncation and nucleus
/// truncation, each renormalised. Masked tokens get probability 0.
std::vector<double> sampling_distribution(std::span<const double> logits, const SamplerConfig& config,
                                          const TokenMask& mask = {});

TokenId draw_token(std::span<const double> logits, const SamplerConfig& config, Rng& rng,
                   const TokenMask& mask = {});

struct SampledTokens {
  TokenSeq tokens;          // excludes the terminator
  bool terminated = false;  // false when the token budget ran out
};

/// Continues `state` until `terminator` (consumed and pushed) or the budget.
SampledTokens sample_until(const Decoder& decoder, DecodeState& state, const SamplerConfig& config, Rng& rng,
                           TokenId terminator, std::size_t max_tokens, const TokenMask& mask = {});

/// One target segment after a prefix ending in "(": words up to ")".
SampledTokens sample_segment(const PolicyParams& params, const TokenSeq& prefix, const SamplerConfig& config,
                             std::uint64_t seed);

/// Free-running response after a prompt, up to <eos>.
SampledTokens generate_response(const Decoder& decoder, const TokenSeq& prompt, const SamplerConfig& config,
                                Rng& rng, std::size_t max_tokens);

}  // namespace sspo::policy
