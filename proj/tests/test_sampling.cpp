// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "sspo/sampling.hpp"
#include "support.hpp"

using namespace sspo;
using namespace sspo::sampling;
using sspo::testing::random_params;
using sspo::testing::tiny_task;

namespace {

constexpr std::uint64_t kSeed = 77;

struct Fixture {
  const corpus::Task& task = tiny_task();
  QualityOracle quality{task.key, task.vocab};
  Oracles oracles{&task.vocab, &task.durations, &quality};
  policy::PolicyParams params = random_params(21);
  std::vector<corpus::Document> query{task.split.demonstration.begin(), task.split.demonstration.begin() + 5};

  SamplingConfig config() const {
    SamplingConfig c;
    c.k = 12;
    c.sampler.max_segment_tokens = 6;
    return c;
  }
};

RawCandidate raw(TokenId word, double duration, double quality) { return {{word}, duration, quality}; }

CandidateSet handmade(const std::vector<double>& penalties, const std::vector<double>& qualities) {
  CandidateSet s;
  for (std::size_t i = 0; i < penalties.size(); ++i)
    s.candidates.push_back({{static_cast<TokenId>(100 + i)}, 1.0, qualities[i], penalties[i], false});
  return s;
}

// Algorithm 1 restated over full prefixes, with its own dedup, discard and
// selection, for comparison against the incremental implementation.
struct BruteLine {
  bool retained = false;
  TokenSeq prefix, chosen, rejected;
  TokenSeq extension;
};

std::vector<BruteLine> brute_force_document(const Fixture& f, const corpus::Document& doc, std::size_t d,
                                            const SamplingConfig& c) {
  const policy::Decoder dec(f.params);
  const auto mask = policy::segment_mask(f.task.vocab);
  const TokenSeq prompt = corpus::encode_prompt(doc);
  std::vector<TokenSeq> extensions;
  std::vector<BruteLine> out;
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    BruteLine b;
    b.prefix = line_prefix(prompt, doc, extensions, i);
    const auto start = dec.start(b.prefix);
    Rng rng(line_stream(kSeed, d, i, 0));
    struct C {
      TokenSeq text;
      double q, p;
    };
    std::vector<C> uniq;
    for (std::size_t j = 0; j < c.k; ++j) {
      auto st = start;
      const auto s = policy::sample_until(dec, st, c.sampler, rng, special::close, c.sampler.max_segment_tokens, mask);
      if (!s.terminated) continue;
      if (std::any_of(uniq.begin(), uniq.end(), [&](const C& x) { return x.text == s.tokens; })) continue;
      const double dur = f.task.durations.duration(s.tokens);
      uniq.push_back({s.tokens, f.quality.score(doc.lines[i].source, s.tokens, doc.terminology),
                      duration::penalty(doc.lines[i].source_duration, dur)});
    }
    const std::size_t m = uniq.size();
    std::size_t drop = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(m) + 1e-9));
    if (m < 2) drop = 0;
    drop = std::min(drop, m >= 2 ? m - 2 : 0);
    std::vector<std::size_t> order(m);
    for (std::size_t j = 0; j < m; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return uniq[a].q != uniq[b].q ? uniq[a].q < uniq[b].q : a > b;
    });
    std::vector<C> surv;
    for (std::size_t j = 0; j < m; ++j)
      if (std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(drop), j) ==
          order.begin() + static_cast<std::ptrdiff_t>(drop))
        surv.push_back(uniq[j]);
    if (surv.size() >= 2) {
      auto lt = [](const C& a, const C& b) {  // a is a better chosen than b
        if (a.p != b.p) return a.p < b.p;
        if (a.q != b.q) return a.q > b.q;
        return a.text < b.text;
      };
      const auto best = *std::min_element(surv.begin(), surv.end(), lt);
      const auto worst = *std::max_element(surv.begin(), surv.end(), lt);
      b.chosen = best.text;
      b.rejected = worst.text;
      b.extension = best.text;
      b.retained = m >= c.epsilon1 && worst.p - best.p >= c.epsilon2;
    } else if (!surv.empty()) {
      b.extension = surv.front().text;
    } else {
      auto st = start;
      policy::SamplerConfig g = c.sampler;
      g.greedy = true;
      Rng unused(0);
      const auto s = policy::sample_until(dec, st, g, unused, special::close, c.sampler.max_segment_tokens, mask);
      b.extension = s.terminated ? s.tokens : TokenSeq{};
    }
    extensions.push_back(b.extension);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

TEST_CASE("worked example: discard, choose and reject") {
  const std::vector<RawCandidate> table{raw(10, 2.66, 85.6), raw(11, 2.73, 84.2), raw(12, 2.93, 89.3),
                                        raw(13, 3.03, 91.4), raw(14, 3.19, 89.8)};
  const auto set = build_candidate_set(0, table, 2.89);
  REQUIRE(set.dedup_count() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(set.candidates[i].discarded == (i == 1));
  const auto sel = select_pair(set);
  REQUIRE(sel);
  CHECK(set.candidates[sel->chosen].duration == 2.93);
  CHECK(set.candidates[sel->rejected].duration == 3.19);
  CHECK(std::abs(set.candidates[sel->chosen].penalty - (std::exp(0.04) - 1.0)) < 1e-9);
  CHECK(std::abs(set.candidates[sel->rejected].penalty - (std::exp(0.30) - 1.0)) < 1e-9);
  CHECK(diversity_filter(set, *sel));
}

TEST_CASE("deduplication keeps first-seen order") {
  const std::vector<RawCandidate> r{raw(10, 1.0, 50), raw(11, 1.1, 60), raw(10, 1.0, 50), raw(12, 1.2, 70),
                                    raw(11, 1.1, 60)};
  const auto set = build_candidate_set(3, r, 1.0);
  CHECK(set.raw_count == 5);
  CHECK(set.line_index == 3);
  REQUIRE(set.dedup_count() == 3);
  CHECK(set.candidates[0].text == TokenSeq{10});
  CHECK(set.candidates[1].text == TokenSeq{11});
  CHECK(set.candidates[2].text == TokenSeq{12});
}

TEST_CASE("quality discard is floor(20%) and keeps at least two") {
  for (std::size_t m = 0; m <= 20; ++m) {
    std::vector<RawCandidate> r;
    for (std::size_t i = 0; i < m; ++i) r.push_back(raw(static_cast<TokenId>(10 + i), 1.0 + 0.01 * i, 10.0 * i));
    const auto set = build_candidate_set(0, r, 1.0);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
      if (set.candidates[i].discarded) {
        ++dropped;
        CHECK(i < m / 5);  // lowest qualities go first
      }
    }
    CHECK(dropped == m / 5);
    if (m >= 2) CHECK(set.survivors().size() >= 2);
  }
}

TEST_CASE("selection needs two survivors") {
  CHECK(!select_pair(build_candidate_set(0, {}, 1.0)));
  CHECK(!select_pair(build_candidate_set(0, {raw(10, 1.0, 1.0)}, 1.0)));
  CHECK(select_pair(build_candidate_set(0, {raw(10, 1.0, 1.0), raw(11, 1.3, 1.0)}, 1.0)));
}

TEST_CASE("selection tie-breaks") {
  // Equal penalties: chosen has the higher quality, rejected the lower.
  const auto s = handmade({0.1, 0.1, 0.5, 0.5}, {60, 70, 80, 40});
  const auto sel = select_pair(s);
  REQUIRE(sel);
  CHECK(sel->chosen == 1);
  CHECK(sel->rejected == 3);
  // Equal penalty and quality: lexicographic order of the text.
  const auto t = handmade({0.2, 0.2, 0.2}, {50, 50, 50});
  const auto sel2 = select_pair(t);
  REQUIRE(sel2);
  CHECK(sel2->chosen == 0);
  CHECK(sel2->rejected == 2);
}

TEST_CASE("diversity filter boundaries are inclusive") {
  const auto sel = Selection{0, 1};
  CHECK(diversity_filter(handmade({0.0, 0.08, 0.01, 0.02}, {1, 1, 1, 1}), sel));
  CHECK(!diversity_filter(handmade({0.0, 0.0799, 0.01, 0.02}, {1, 1, 1, 1}), sel));
  CHECK(!diversity_filter(handmade({0.0, 0.5, 0.01}, {1, 1, 1}), sel));
  CHECK(diversity_filter(handmade({0.0, 0.5, 0.01, 0.3}, {1, 1, 1, 1}), sel));
  CHECK(!diversity_filter(handmade({0.0, 0.5, 0.01, 0.3}, {1, 1, 1, 1}), sel, 5, 0.08));
}

TEST_CASE("segment sampling matches a brute-force restatement") {
  Fixture f;
  const auto c = f.config();
  const auto data = sspo_sample(f.params, f.query, c, f.oracles, kSeed);
  REQUIRE(data.documents.size() == 5);
  std::size_t retained = 0;
  for (std::size_t d = 0; d < f.query.size(); ++d) {
    const auto brute = brute_force_document(f, f.query[d], d, c);
    const auto& doc = data.documents[d];
    CHECK(doc.lines == f.query[d].lines.size());
    std::size_t p = 0;
    for (std::size_t i = 0; i < brute.size(); ++i) {
      if (!brute[i].retained) continue;
      REQUIRE(p < doc.pairs.size());
      const auto& pair = doc.pairs[p++];
      CHECK(pair.line_index == i);
      CHECK(pair.prefix == brute[i].prefix);
      CHECK(pair.chosen == brute[i].chosen);
      CHECK(pair.rejected == brute[i].rejected);
      CHECK(pair.penalty_gap() >= c.epsilon2);
      CHECK(pair.dedup_count >= c.epsilon1);
      ++retained;
    }
    CHECK(p == doc.pairs.size());

    // Fine sampling's minimum pass shares the stream of segment sampling.
    const auto fine = fine_pass(f.params, f.query[d], d, true, c, f.oracles, kSeed);
    REQUIRE(fine.size() == brute.size());
    for (std::size_t i = 0; i < brute.size(); ++i) CHECK(fine[i] == brute[i].extension);
  }
  CHECK(retained > 0);
  CHECK(retained == data.retained());
}

TEST_CASE("prefixes nest along the chosen path") {
  Fixture f;
  const auto data = sspo_sample(f.params, f.query, f.config(), f.oracles, kSeed);
  for (const auto& doc : data.documents) {
    for (std::size_t a = 0; a + 1 < doc.pairs.size(); ++a) {
      const auto& p = doc.pairs[a];
      const auto& q = doc.pairs[a + 1];
      REQUIRE(q.prefix.size() > p.prefix.size());
      CHECK(std::equal(p.prefix.begin(), p.prefix.end(), q.prefix.begin()));
      TokenSeq expect(p.prefix);
      expect.insert(expect.end(), p.chosen.begin(), p.chosen.end());
      expect.push_back(special::close);
      expect.push_back(special::newline);
      CHECK(std::equal(expect.begin(), expect.end(), q.prefix.begin()));
    }
    for (const auto& p : doc.pairs) CHECK(p.prefix.back() == special::open);
  }
}

TEST_CASE("sampling cost accounting") {
  Fixture f;
  const auto c = f.config();
  std::size_t lines = 0;
  for (const auto& d : f.query) lines += d.lines.size();
  const auto seg = sspo_sample(f.params, f.query, c, f.oracles, kSeed);
  CHECK(seg.counters.segment_samples == lines * c.k);
  CHECK(seg.counters.response_samples == 0);
  const auto fine = fine_sample(f.params, f.query, c, f.oracles, kSeed);
  CHECK(fine.counters.segment_samples == 2 * lines * c.k);
  const auto coarse = coarse_sample(f.params, f.query, c, f.oracles, kSeed);
  CHECK(coarse.counters.response_samples == f.query.size() * c.k);
  CHECK(coarse.counters.segment_samples == 0);
}

TEST_CASE("fine pairs pair the minimum and maximum passes") {
  Fixture f;
  const auto c = f.config();
  const auto fine = fine_sample(f.params, f.query, c, f.oracles, kSeed);
  CHECK(fine.pairs.size() + fine.skipped == f.query.size());
  for (const auto& p : fine.pairs) {
    const auto d = static_cast<std::size_t>(
        std::find_if(f.query.begin(), f.query.end(), [&](const auto& x) { return x.prompt_id == p.prompt_id; }) -
        f.query.begin());
    const auto best = fine_pass(f.params, f.query[d], d, true, c, f.oracles, kSeed);
    const auto worst = fine_pass(f.params, f.query[d], d, false, c, f.oracles, kSeed);
    CHECK(p.chosen == assemble_response(f.query[d], best));
    CHECK(p.rejected == assemble_response(f.query[d], worst));
    CHECK(p.prompt == corpus::encode_prompt(f.query[d]));
    double bs = 0.0;
    for (std::size_t i = 0; i < best.size(); ++i)
      bs += duration::penalty(f.query[d].lines[i].source_duration, f.task.durations.duration(best[i]));
    CHECK(std::abs(p.chosen_sum - bs) < 1e-12);
  }
}

TEST_CASE("coarse ranking uses summed line penalties") {
  // Summed penalties recovered from parsed text match the targets that built it.
  const auto& task = tiny_task();
  const auto& doc = task.split.demonstration.front();
  std::vector<TokenSeq> short_t, long_t;
  for (const auto& l : doc.lines) {
    TokenSeq s, g;
    for (TokenId w : l.source) {
      const auto& syn = task.key.synonyms[static_cast<std::size_t>(w)];
      auto by_dur = syn;
      std::sort(by_dur.begin(), by_dur.end(), [&](TokenId a, TokenId b) {
        return task.durations.token_duration(a) < task.durations.token_duration(b);
      });
      s.push_back(by_dur.front());
      g.push_back(by_dur.back());
    }
    short_t.push_back(s);
    long_t.push_back(g);
  }
  const auto resp = assemble_response(doc, long_t);
  const auto parsed = corpus::parse_response(task.vocab.decode(resp), doc, task.vocab);
  double sum = 0.0, by_hand = 0.0;
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    REQUIRE(parsed.efficient[i]);
    sum += duration::penalty(doc.lines[i].source_duration, task.durations.duration(*parsed.targets[i]));
    by_hand += duration::penalty(doc.lines[i].source_duration, task.durations.duration(long_t[i]));
  }
  CHECK(sum == by_hand);

  Fixture f;
  const auto coarse = coarse_sample(f.params, f.query, f.config(), f.oracles, kSeed);
  CHECK(coarse.pairs.size() + coarse.skipped == f.query.size());
  for (const auto& p : coarse.pairs) {
    CHECK(p.chosen_sum <= p.rejected_sum);
    CHECK(p.chosen.back() == special::eos);
    CHECK(p.rejected.back() == special::eos);
  }
}

TEST_CASE("sampling is deterministic and worker-count invariant") {
  Fixture f;
  auto c = f.config();
  const auto a = sspo_sample(f.params, f.query, c, f.oracles, kSeed);
  c.workers = 3;
  const auto b = sspo_sample(f.params, f.query, c, f.oracles, kSeed);
  const auto x = a.flatten(), y = b.flatten();
  REQUIRE(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i]->prefix == y[i]->prefix);
    CHECK(x[i]->chosen == y[i]->chosen);
    CHECK(x[i]->rejected == y[i]->rejected);
  }
  const auto other = sspo_sample(f.params, f.query, f.config(), f.oracles, kSeed + 1);
  bool differs = other.retained() != a.retained();
  for (std::size_t i = 0; !differs && i < x.size(); ++i) differs = other.flatten()[i]->chosen != x[i]->chosen;
  CHECK(differs);
}

TEST_CASE("sampled datasets round trip through line records") {
  Fixture f;
  const auto c = f.config();
  const auto dir = std::filesystem::temp_directory_path() / "sspo-test-sampling";
  std::filesystem::remove_all(dir);
  const auto data = sspo_sample(f.params, f.query, c, f.oracles, kSeed);
  write_sampled(dir / "pairs.jsonl", data);
  const auto back = read_sampled(dir / "pairs.jsonl");
  REQUIRE(back.documents.size() == data.documents.size());
  CHECK(back.counters.segment_samples == data.counters.segment_samples);
  const auto x = data.flatten(), y = back.flatten();
  REQUIRE(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i]->prefix == y[i]->prefix);
    CHECK(x[i]->chosen == y[i]->chosen);
    CHECK(x[i]->rejected == y[i]->rejected);
    CHECK(x[i]->chosen_penalty == y[i]->chosen_penalty);
    CHECK(x[i]->rejected_quality == y[i]->rejected_quality);
    CHECK(x[i]->dedup_count == y[i]->dedup_count);
  }
  CHECK(duration::alignment_bound(back) == duration::alignment_bound(data));

  const auto fine = fine_sample(f.params, f.query, c, f.oracles, kSeed);
  write_response_pairs(dir / "fine.jsonl", fine);
  const auto fb = read_response_pairs(dir / "fine.jsonl");
  REQUIRE(fb.pairs.size() == fine.pairs.size());
  CHECK(fb.skipped == fine.skipped);
  for (std::size_t i = 0; i < fb.pairs.size(); ++i) {
    CHECK(fb.pairs[i].chosen == fine.pairs[i].chosen);
    CHECK(fb.pairs[i].rejected_sum == fine.pairs[i].rejected_sum);
  }

  // A corrupted prefix is caught by its hash.
  {
    std::ifstream in(dir / "pairs.jsonl");
    std::string all((std::istreambuf_iterator<char>(in)), {});
    const auto at = all.find("\"prefix\":[0,");
    REQUIRE(at != std::string::npos);
    all.replace(at, 12, "\"prefix\":[1,");
    std::ofstream out(dir / "bad.jsonl");
    out << all;
  }
  try {
    (void)read_sampled(dir / "bad.jsonl");
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}
