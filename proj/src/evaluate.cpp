// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/evaluate.hpp"

#include "sspo/parallel.hpp"

namespace sspo::eval {

std::vector<double> EvalResult::differences() const {
  std::vector<double> d;
  for (const auto& l : lines)
    if (l.efficient) d.push_back(l.dur_t - l.dur_s);
  return d;
}

EvalResult summarize(std::vector<LineResult> lines, double threshold) {
  EvalResult r;
  std::vector<duration::LineObservation> obs;
  for (const auto& l : lines) obs.push_back({l.dur_s, l.dur_t, l.efficient});
  r.metrics = duration::line_metrics(obs, threshold);
  r.lines = std::move(lines);
  return r;
}

EvalResult evaluate_policy(const policy::PolicyParams& params, const std::vector<corpus::Document>& docs,
                           const duration::DurationOracle& durations, const policy::SamplerConfig& sampler,
                           std::uint64_t seed, std::size_t workers, double threshold,
                           std::size_t max_response_tokens) {
  if (docs.empty()) fail(ErrorKind::empty_input, "evaluate: no documents");
  const policy::Decoder dec(params);
  const Vocabulary& vocab = *params.vocab;
  auto per_doc = parallel::map<std::vector<LineResult>>(
      docs.size(),
      [&](std::size_t d) {
        const auto& doc = docs[d];
        Rng rng(derive_seed(seed, 0xe7a1, d));
        const auto out = policy::generate_response(dec, corpus::encode_prompt(doc, params.config.context_window),
                                                   sampler, rng, max_response_tokens);
        const auto parsed = corpus::parse_response(vocab.decode(out.tokens), doc, vocab);
        std::vector<LineResult> lines;
        for (std::size_t i = 0; i < doc.lines.size(); ++i) {
          LineResult l{doc.prompt_id, i, doc.lines[i].source_duration, durations.pause(), parsed.efficient[i], {}};
          if (l.efficient) {
            l.target = *parsed.targets[i];
            l.dur_t = durations.duration(l.target);
          }
          lines.push_back(std::move(l));
        }
        return lines;
      },
      workers);
  std::vector<LineResult> all;
  for (auto& v : per_doc)
    for (auto& l : v) all.push_back(std::move(l));
  return summarize(std::move(all), threshold);
}

EvalResult evaluate_references(const std::vector<corpus::Document>& docs, const duration::DurationOracle& durations,
                               double threshold) {
  if (docs.empty()) fail(ErrorKind::empty_input, "evaluate: no documents");
  std::vector<LineResult> all;
  for (const auto& doc : docs)
    for (std::size_t i = 0; i < doc.lines.size(); ++i)
      all.push_back({doc.prompt_id, i, doc.lines[i].source_duration, durations.duration(doc.lines[i].reference), true,
                     doc.lines[i].reference});
  return summarize(std::move(all), threshold);
}

}  // namespace sspo::eval
