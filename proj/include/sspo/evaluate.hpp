// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "sspo/corpus.hpp"
#include "sspo/duration.hpp"
#include "sspo/model.hpp"
#include "sspo/sampler.hpp"

namespace sspo::eval {

struct LineResult {
  std::string prompt_id;
  std::size_t line_index = 0;
  double dur_s = 0.0;
  double dur_t = 0.0;  // empty-target duration (the pause) when not efficient
  bool efficient = false;
  TokenSeq target;
};

/// Per-line outcomes plus the metrics over them. Non-efficient lines enter the
/// all-lines figures with an empty target; the efficient-only mean penalty is
/// reported alongside.
struct EvalResult {
  std::vector<LineResult> lines;
  duration::MetricsReport metrics;

  /// dur_t - dur_s over efficient lines.
  std::vector<double> differences() const;
};

EvalResult summarize(std::vector<LineResult> lines, double threshold);

/// Decodes every document (greedy by default) and scores it.
EvalResult evaluate_policy(const policy::PolicyParams& params, const std::vector<corpus::Document>& docs,
                           const duration::DurationOracle& durations, const policy::SamplerConfig& sampler,
                           std::uint64_t seed, std::size_t workers = 1,
                           double threshold = duration::kDefaultConsistencyThreshold,
                           std::size_t max_response_tokens = 400);

/// The reference translations scored the same way.
EvalResult evaluate_references(const std::vector<corpus::Document>& docs, const duration::DurationOracle& durations,
                               double threshold = duration::kDefaultConsistencyThreshold);

}  // namespace sspo::eval
