// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit tests.
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "sspo/corpus.hpp"
#include "sspo/model.hpp"
#include "sspo/rng.hpp"

namespace sspo::testing {

inline corpus::SyntheticTaskSpec tiny_spec() {
  corpus::SyntheticTaskSpec s;
  s.source_vocab_size = 6;
  s.synonym_set_size = 3;
  s.line_length_min = 2;
  s.line_length_max = 3;
  s.lines_per_document = 3;
  s.documents = 40;
  s.test_documents = 4;
  s.function_words = 2;
  return s;
}

inline const corpus::Task& tiny_task() {
  static const corpus::Task task = corpus::generate_task(tiny_spec(), 5);
  return task;
}

inline std::shared_ptr<const Vocabulary> tiny_vocab() {
  static const auto v = std::make_shared<const Vocabulary>(tiny_task().vocab);
  return v;
}

inline policy::ModelConfig tiny_model_config() {
  policy::ModelConfig c;
  c.vocab_size = tiny_vocab()->size();
  c.d_model = 12;
  c.n_heads = 2;
  c.d_ff = 16;
  c.lora_rank = 3;
  c.lora_alpha = 6.0;
  return c;
}

/// Tiny model whose weights are perturbed away from the structured init so
/// that every tensor, including adapters, carries gradient.
inline policy::PolicyParams random_params(std::uint64_t seed, bool adapters = false, bool freeze = true) {
  auto p = policy::init_params(tiny_model_config(), tiny_vocab(), seed);
  Rng rng(seed ^ 0x5eed);
  for (double& w : p.base) w += 0.05 * rng.normal();
  if (adapters) {
    policy::attach_adapters(p, seed + 1, freeze);
    for (double& w : p.adapters) w += 0.1 * rng.normal();
  }
  return p;
}

/// A random well-formed prefix ending in "(" plus a short segment.
struct SegmentCase {
  TokenSeq prefix;
  TokenSeq segment;
};

inline SegmentCase random_segment_case(Rng& rng) {
  const auto& task = tiny_task();
  const auto& doc = task.split.demonstration[rng.below(task.split.demonstration.size())];
  SegmentCase c;
  c.prefix = corpus::encode_prompt(doc);
  const std::size_t line = rng.below(doc.lines.size());
  for (std::size_t i = 0; i < line; ++i) {
    auto l = corpus::encode_response_line(doc.lines[i].source, doc.lines[i].reference);
    c.prefix.insert(c.prefix.end(), l.begin(), l.end());
  }
  c.prefix.insert(c.prefix.end(), doc.lines[line].source.begin(), doc.lines[line].source.end());
  c.prefix.push_back(special::open);
  const std::size_t len = 1 + rng.below(3);
  for (std::size_t j = 0; j < len; ++j)
    c.segment.push_back(static_cast<TokenId>(special::count + rng.below(task.vocab.size() - special::count)));
  c.segment.push_back(special::close);
  return c;
}

/// Relative error of an analytic directional derivative against a central
/// difference along the same direction.
inline double directional_error(const std::function<double(double)>& along, double analytic, double h = 1e-5) {
  const double numeric = (along(h) - along(-h)) / (2.0 * h);
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace sspo::testing
