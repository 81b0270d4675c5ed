// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sspo/corpus.hpp"
#include "sspo/duration.hpp"
#include "sspo/model.hpp"
#include "sspo/sampler.hpp"

namespace sspo {

inline constexpr int kSampleSchemaVersion = 1;

/// One supervised segment: both continuations share the chosen prefix p_i,
/// which ends with the line's source words and "(".
struct PreferencePair {
  std::size_t line_index = 0;
  TokenSeq prefix;
  TokenSeq chosen;    // target words, without ")"
  TokenSeq rejected;
  double chosen_penalty = 0.0;
  double rejected_penalty = 0.0;
  double chosen_quality = 0.0;
  double rejected_quality = 0.0;
  std::size_t dedup_count = 0;

  double penalty_gap() const noexcept { return rejected_penalty - chosen_penalty; }
};

struct DocumentSample {
  std::string prompt_id;
  std::vector<PreferencePair> pairs;  // retained lines only
  std::size_t lines = 0;              // lines visited
};

struct SampleCounters {
  std::size_t segment_samples = 0;
  std::size_t response_samples = 0;
  SampleCounters& operator+=(const SampleCounters& o) {
    segment_samples += o.segment_samples;
    response_samples += o.response_samples;
    return *this;
  }
};

struct SampledDataset {
  std::vector<DocumentSample> documents;
  SampleCounters counters;

  std::size_t retained() const noexcept;
  std::size_t visited() const noexcept;
  double retained_fraction() const noexcept;
  std::vector<const PreferencePair*> flatten() const;
};

/// Whole-response preference pair for vanilla DPO.
struct ResponsePair {
  std::string prompt_id;
  TokenSeq prompt;
  TokenSeq chosen;  // response tokens, ending with <eos>
  TokenSeq rejected;
  double chosen_sum = 0.0;  // summed line penalties
  double rejected_sum = 0.0;
};

struct ResponsePairSet {
  std::vector<ResponsePair> pairs;
  std::size_t skipped = 0;      // documents without two distinct rankable responses
  std::size_t unparseable = 0;  // responses excluded from ranking
  SampleCounters counters;
};

namespace sampling {

/// Synthetic stand-in for reference-free translation quality, 0..100.
/// Two scorers are averaged: one positional, one order-insensitive.
class QualityOracle {
 public:
  QualityOracle(const corpus::QualityKey& key, const Vocabulary& vocab, bool two_scorers = true);

  double score(const TokenSeq& source, const TokenSeq& target, const std::map<TokenId, TokenId>& terms) const;
  double positional(const TokenSeq& source, const TokenSeq& target, const std::map<TokenId, TokenId>& terms) const;
  double bag(const TokenSeq& source, const TokenSeq& target, const std::map<TokenId, TokenId>& terms) const;

 private:
  const corpus::QualityKey* key_;
  const Vocabulary* vocab_;
  bool two_;
};

struct Oracles {
  const Vocabulary* vocab = nullptr;
  const duration::DurationOracle* durations = nullptr;
  const QualityOracle* quality = nullptr;
};

struct RawCandidate {
  TokenSeq text;
  double duration = 0.0;
  double quality = 0.0;
};

struct Candidate {
  TokenSeq text;
  double duration = 0.0;
  double quality = 0.0;
  double penalty = 0.0;
  bool discarded = false;  // fell in the bottom quality fraction
};

/// Distinct candidates of one line in first-seen order.
struct CandidateSet {
  std::size_t line_index = 0;
  std::size_t raw_count = 0;
  std::vector<Candidate> candidates;

  std::size_t dedup_count() const noexcept { return candidates.size(); }
  std::vector<std::size_t> survivors() const;
};

inline constexpr double kDefaultDiscardFraction = 0.2;

/// Deduplicate by exact text, discard floor(fraction * count) lowest-quality
/// candidates while keeping at least two, and score penalties.
CandidateSet build_candidate_set(std::size_t line_index, const std::vector<RawCandidate>& raw, double source_duration,
                                 double discard_fraction = kDefaultDiscardFraction);

struct Selection {
  std::size_t chosen = 0;  // indices into CandidateSet::candidates
  std::size_t rejected = 0;
};

/// Minimum-penalty survivor is chosen, maximum-penalty survivor rejected.
/// nullopt signals insufficient diversity (fewer than two survivors).
std::optional<Selection> select_pair(const CandidateSet& set);

inline constexpr std::size_t kDefaultEpsilon1 = 4;
inline constexpr double kDefaultEpsilon2 = 0.08;

bool diversity_filter(const CandidateSet& set, const Selection& sel, std::size_t epsilon1 = kDefaultEpsilon1,
                      double epsilon2 = kDefaultEpsilon2);

struct SamplingConfig {
  std::size_t k = 20;
  std::size_t epsilon1 = kDefaultEpsilon1;
  double epsilon2 = kDefaultEpsilon2;
  double discard_fraction = kDefaultDiscardFraction;
  policy::SamplerConfig sampler;
  std::size_t max_response_tokens = 400;
  std::size_t workers = 1;

  void validate() const;
};

/// Rng stream of one line of one document in one sampling pass.
std::uint64_t line_stream(std::uint64_t seed, std::size_t document, std::size_t line, std::size_t pass);

/// k segment samples from `state` (a prefix ending in "("); `state` itself is
/// left untouched.
CandidateSet sample_line_candidates(const policy::Decoder& decoder, const policy::DecodeState& state,
                                    std::size_t line_index, const corpus::LinePair& line,
                                    const std::map<TokenId, TokenId>& terms, const SamplingConfig& config,
                                    const Oracles& oracles, Rng& rng);

SampledDataset sspo_sample(const policy::PolicyParams& policy, const std::vector<corpus::Document>& query,
                           const SamplingConfig& config, const Oracles& oracles, std::uint64_t seed);

ResponsePairSet coarse_sample(const policy::PolicyParams& policy, const std::vector<corpus::Document>& query,
                              const SamplingConfig& config, const Oracles& oracles, std::uint64_t seed);

ResponsePairSet fine_sample(const policy::PolicyParams& policy, const std::vector<corpus::Document>& query,
                            const SamplingConfig& config, const Oracles& oracles, std::uint64_t seed);

/// Per-line chosen continuations of one fine-sampling pass, exposed for the
/// shared-stream check against sspo_sample.
std::vector<TokenSeq> fine_pass(const policy::PolicyParams& policy, const corpus::Document& doc,
                                std::size_t doc_index, bool minimum, const SamplingConfig& config,
                                const Oracles& oracles, std::uint64_t seed, SampleCounters* counters = nullptr);

struct Step {
  TokenSeq prefix;  // ends with the source words and "("
  TokenSeq action;  // sampled target words, without ")"
  double reward = 0.0;
  double value = 0.0;
  double advantage = 0.0;
  double delta = 0.0;
  double old_logprob = 0.0;  // of action + ")" under the rollout policy
};

struct Trajectory {
  std::string prompt_id;
  std::vector<Step> steps;
};

/// Prefix features for a value model: the final hidden state at the end of
/// each prefix.
using ValueFn = std::function<double(const TokenSeq& prefix)>;

std::vector<Trajectory> ppo_rollout(const policy::PolicyParams& policy, const std::vector<corpus::Document>& query,
                                    const SamplingConfig& config, const Oracles& oracles, const ValueFn& value,
                                    std::uint64_t seed, SampleCounters* counters = nullptr);

/// Response tokens whose line i uses targets[i].
TokenSeq assemble_response(const corpus::Document& doc, const std::vector<TokenSeq>& targets);
/// Prefix of line i given chosen targets of lines 0..i-1.
TokenSeq line_prefix(const TokenSeq& prompt, const corpus::Document& doc, const std::vector<TokenSeq>& targets,
                     std::size_t line);
/// Target tokens followed by ")", the unit scored by the policy.
TokenSeq segment_tokens(const TokenSeq& target);

// Line-delimited persistence.
void write_sampled(const std::filesystem::path& path, const SampledDataset& data);
SampledDataset read_sampled(const std::filesystem::path& path);
void write_response_pairs(const std::filesystem::path& path, const ResponsePairSet& data);
ResponsePairSet read_response_pairs(const std::filesystem::path& path);
void write_rollouts(const std::filesystem::path& path, const std::vector<Trajectory>& data);

}  // namespace sampling
}  // namespace sspo
