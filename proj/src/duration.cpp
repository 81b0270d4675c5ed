// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/duration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sspo/sampling.hpp"

namespace sspo::duration {

DurationOracle::DurationOracle(std::vector<double> token_durations, double pause)
    : table_(std::move(token_durations)), pause_(pause) {
  if (!(pause >= 0.0)) fail(ErrorKind::config, "pause must be non-negative");
}

bool DurationOracle::has(TokenId id) const noexcept {
  return id >= 0 && static_cast<std::size_t>(id) < table_.size() && table_[static_cast<std::size_t>(id)] > 0.0;
}

double DurationOracle::token_duration(TokenId id) const {
  if (!has(id)) fail(ErrorKind::vocabulary, "token " + std::to_string(id) + " has no duration");
  return table_[static_cast<std::size_t>(id)];
}

double DurationOracle::duration(const TokenSeq& text) const {
  double d = pause_;
  for (TokenId t : text) d += token_duration(t);
  return d;
}

double penalty(double dur_s, double dur_t) {
  if (!(dur_s >= 0.0) || !(dur_t >= 0.0))
    fail(ErrorKind::domain, "penalty: durations must be non-negative");
  return std::exp(std::max(0.0, dur_t - dur_s)) + std::max(0.0, dur_s - dur_t) - 1.0;
}

MetricsReport line_metrics(std::span<const LineObservation> pairs, double threshold) {
  if (pairs.empty()) fail(ErrorKind::empty_input, "line_metrics: no lines");
  MetricsReport m;
  std::size_t st = 0, ts = 0, consistent = 0, efficient = 0;
  double st_sum = 0.0, ts_sum = 0.0, p_sum = 0.0, p_eff_sum = 0.0;
  for (const auto& o : pairs) {
    const double diff = o.dur_t - o.dur_s;
    if (-diff > threshold) {
      ++st;
      st_sum += -diff;
    } else if (diff > threshold) {
      ++ts;
      ts_sum += diff;
    } else {
      ++consistent;
    }
    const double p = penalty(o.dur_s, o.dur_t);
    p_sum += p;
    if (o.efficient) {
      ++efficient;
      p_eff_sum += p;
    }
  }
  const auto n = static_cast<double>(pairs.size());
  m.lines = pairs.size();
  m.st_rate = static_cast<double>(st) / n;
  m.ts_rate = static_cast<double>(ts) / n;
  m.cr = static_cast<double>(consistent) / n;
  m.st_dur = st ? st_sum / static_cast<double>(st) : 0.0;
  m.ts_dur = ts ? ts_sum / static_cast<double>(ts) : 0.0;
  m.mean_penalty = p_sum / n;
  m.mean_penalty_efficient = efficient ? p_eff_sum / static_cast<double>(efficient) : 0.0;
  m.efficient_rate = static_cast<double>(efficient) / n;
  return m;
}

double alignment_bound(std::span<const double> chosen_penalties) {
  if (chosen_penalties.empty()) fail(ErrorKind::empty_input, "alignment_bound: empty dataset");
  double s = 0.0;
  for (double p : chosen_penalties) s += p;
  return s / static_cast<double>(chosen_penalties.size());
}

double alignment_bound(const SampledDataset& sampled) {
  std::vector<double> p;
  for (const auto& doc : sampled.documents)
    for (const auto& pair : doc.pairs) p.push_back(pair.chosen_penalty);
  return alignment_bound(p);
}

std::string csv_header() {
  return "Method,Train,S>T Rate,S>T Dur,T>S Rate,T>S Dur,CR,P,Efficient Rate,P (efficient lines),Lines";
}

std::string csv_row(const std::string& method, const std::string& train, const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%zu", m.st_rate, m.st_dur,
                m.ts_rate, m.ts_dur, m.cr, m.mean_penalty, m.efficient_rate, m.mean_penalty_efficient,
                m.lines);
  return method + "," + train + buf;
}

std::string keyed_text(const MetricsReport& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "S>T Rate: %.6f\nS>T Dur: %.6f\nT>S Rate: %.6f\nT>S Dur: %.6f\nCR: %.6f\nP: %.6f\n"
                "Efficient Rate: %.6f\nP (efficient lines): %.6f\nLines: %zu\n",
                m.st_rate, m.st_dur, m.ts_rate, m.ts_dur, m.cr, m.mean_penalty, m.efficient_rate,
                m.mean_penalty_efficient, m.lines);
  return buf;
}

Histogram histogram(std::span<const double> values, double bin_width) {
  if (!(bin_width > 0.0)) fail(ErrorKind::config, "histogram: bin width must be positive");
  Histogram h;
  h.bin_width = bin_width;
  if (values.empty()) return h;
  std::vector<int> bins;
  bins.reserve(values.size());
  double sum = 0.0;
  for (double v : values) {
    bins.push_back(static_cast<int>(std::floor(v / bin_width + 0.5)));
    sum += v;
  }
  const auto [lo, hi] = std::minmax_element(bins.begin(), bins.end());
  h.min_bin = *lo;
  h.counts.assign(static_cast<std::size_t>(*hi - *lo + 1), 0);
  for (int b : bins) ++h.counts[static_cast<std::size_t>(b - h.min_bin)];
  h.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - h.mean) * (v - h.mean);
  h.variance = ss / static_cast<double>(values.size());
  return h;
}

}  // namespace sspo::duration
