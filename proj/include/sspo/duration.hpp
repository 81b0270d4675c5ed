// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "sspo/common.hpp"

namespace sspo {

struct SampledDataset;

namespace duration {

/// Lines whose source/target durations differ by at most this many seconds
/// count as consistent.
inline constexpr double kDefaultConsistencyThreshold = 0.1;

/// Additive TTS stand-in: duration(seq) = pause + sum of token durations.
class DurationOracle {
 public:
  DurationOracle() = default;
  /// `token_durations[id] <= 0` marks a token without a duration (specials).
  DurationOracle(std::vector<double> token_durations, double pause);

  double pause() const noexcept { return pause_; }
  bool has(TokenId id) const noexcept;
  double token_duration(TokenId id) const;
  double duration(const TokenSeq& text) const;

  const std::vector<double>& table() const noexcept { return table_; }

 private:
  std::vector<double> table_;
  double pause_ = 0.0;
};

/// exp(max(0, t - s)) + max(0, s - t) - 1: exponential when the target
/// overshoots the source, linear when it undershoots.
double penalty(double dur_s, double dur_t);

struct LineObservation {
  double dur_s = 0.0;
  double dur_t = 0.0;
  bool efficient = true;
};

struct MetricsReport {
  double st_rate = 0.0;  // source longer than target by more than the threshold
  double st_dur = 0.0;   // mean excess over that bucket
  double ts_rate = 0.0;
  double ts_dur = 0.0;
  double cr = 0.0;
  double mean_penalty = 0.0;            // over every line
  double mean_penalty_efficient = 0.0;  // over efficient lines only; 0 if none
  double efficient_rate = 0.0;
  std::size_t lines = 0;
};

MetricsReport line_metrics(std::span<const LineObservation> pairs,
                           double threshold = kDefaultConsistencyThreshold);

/// Mean penalty of the chosen candidate over every retained line.
double alignment_bound(const SampledDataset& sampled);
double alignment_bound(std::span<const double> chosen_penalties);

// Serialization. Column names follow the usual duration-alignment tables.
std::string csv_header();
std::string csv_row(const std::string& method, const std::string& train, const MetricsReport& m);
std::string keyed_text(const MetricsReport& m);

struct Histogram {
  double bin_width = 0.1;
  int min_bin = 0;                 // bin i covers [(i-0.5)w, (i+0.5)w)
  std::vector<std::size_t> counts;  // counts[j] is bin min_bin + j
  double mean = 0.0;
  double variance = 0.0;  // population variance of the raw values
};

/// Bins centred on multiples of `bin_width`, symmetric around zero.
Histogram histogram(std::span<const double> values, double bin_width = 0.1);

}  // namespace duration
}  // namespace sspo
