// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "sspo/parallel.hpp"

namespace sspo {

std::size_t SampledDataset::retained() const noexcept {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.pairs.size();
  return n;
}

std::size_t SampledDataset::visited() const noexcept {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.lines;
  return n;
}

double SampledDataset::retained_fraction() const noexcept {
  const std::size_t v = visited();
  return v ? static_cast<double>(retained()) / static_cast<double>(v) : 0.0;
}

std::vector<const PreferencePair*> SampledDataset::flatten() const {
  std::vector<const PreferencePair*> out;
  for (const auto& d : documents)
    for (const auto& p : d.pairs) out.push_back(&p);
  return out;
}

namespace sampling {
namespace {

using nlohmann::json;
using policy::DecodeState;
using policy::Decoder;
using policy::PolicyParams;

constexpr double kViolationCost = 5.0;

std::size_t function_violations(const TokenSeq& target, const Vocabulary& vocab) {
  std::size_t v = 0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (!vocab.is_function(target[j])) continue;
    const bool last = j + 1 == target.size();
    if (last || vocab.is_function(target[j + 1])) ++v;
  }
  return v;
}

double finish_score(double credit, std::size_t src_len, std::size_t content, std::size_t violations) {
  const double denom = static_cast<double>(std::max(src_len, content));
  const double s = 100.0 * credit / std::max(denom, 1.0) - kViolationCost * static_cast<double>(violations);
  return std::clamp(s, 0.0, 100.0);
}

double word_credit(const corpus::QualityKey& key, const std::map<TokenId, TokenId>& terms, TokenId s, TokenId t) {
  if (!key.is_synonym(s, t)) return 0.0;
  const auto it = terms.find(s);
  return (it != terms.end() && it->second != t) ? 0.5 : 1.0;
}

}  // namespace

QualityOracle::QualityOracle(const corpus::QualityKey& key, const Vocabulary& vocab, bool two_scorers)
    : key_(&key), vocab_(&vocab), two_(two_scorers) {}

double QualityOracle::positional(const TokenSeq& source, const TokenSeq& target,
                                 const std::map<TokenId, TokenId>& terms) const {
  TokenSeq content;
  for (TokenId t : target)
    if (!vocab_->is_function(t)) content.push_back(t);
  double credit = 0.0;
  for (std::size_t j = 0; j < std::min(source.size(), content.size()); ++j)
    credit += word_credit(*key_, terms, source[j], content[j]);
  return finish_score(credit, source.size(), content.size(), function_violations(target, *vocab_));
}

double QualityOracle::bag(const TokenSeq& source, const TokenSeq& target,
                          const std::map<TokenId, TokenId>& terms) const {
  std::vector<bool> used(source.size(), false);
  std::size_t content = 0;
  double credit = 0.0;
  for (TokenId t : target) {
    if (vocab_->is_function(t)) continue;
    ++content;
    double best = 0.0;
    std::size_t at = source.size();
    for (std::size_t j = 0; j < source.size(); ++j) {
      if (used[j]) continue;
      const double c = word_credit(*key_, terms, source[j], t);
      if (c > best) {
        best = c;
        at = j;
      }
    }
    if (at < source.size()) {
      used[at] = true;
      credit += best;
    }
  }
  return finish_score(credit, source.size(), content, function_violations(target, *vocab_));
}

double QualityOracle::score(const TokenSeq& source, const TokenSeq& target,
                            const std::map<TokenId, TokenId>& terms) const {
  const double a = positional(source, target, terms);
  return two_ ? 0.5 * (a + bag(source, target, terms)) : a;
}

std::vector<std::size_t> CandidateSet::survivors() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (!candidates[i].discarded) out.push_back(i);
  return out;
}

CandidateSet build_candidate_set(std::size_t line_index, const std::vector<RawCandidate>& raw, double source_duration,
                                 double discard_fraction) {
  CandidateSet set;
  set.line_index = line_index;
  set.raw_count = raw.size();
  for (const auto& r : raw) {
    const bool dup = std::any_of(set.candidates.begin(), set.candidates.end(),
                                 [&](const Candidate& c) { return c.text == r.text; });
    if (dup) continue;
    set.candidates.push_back({r.text, r.duration, r.quality, duration::penalty(source_duration, r.duration), false});
  }
  const std::size_t m = set.candidates.size();
  const auto want = static_cast<std::size_t>(std::floor(discard_fraction * static_cast<double>(m) + 1e-9));
  const std::size_t drop = std::min(want, m >= 2 ? m - 2 : std::size_t{0});
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  // Lowest quality first; among equals the later-seen candidate goes first.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (set.candidates[a].quality != set.candidates[b].quality)
      return set.candidates[a].quality < set.candidates[b].quality;
    return a > b;
  });
  for (std::size_t i = 0; i < drop; ++i) set.candidates[order[i]].discarded = true;
  return set;
}

std::optional<Selection> select_pair(const CandidateSet& set) {
  const auto surv = set.survivors();
  if (surv.size() < 2) return std::nullopt;
  const auto& c = set.candidates;
  auto better = [&](std::size_t a, std::size_t b) {  // a preferred as chosen over b
    if (c[a].penalty != c[b].penalty) return c[a].penalty < c[b].penalty;
    if (c[a].quality != c[b].quality) return c[a].quality > c[b].quality;
    return c[a].text < c[b].text;
  };
  Selection s{surv.front(), surv.front()};
  for (std::size_t i : surv) {
    if (better(i, s.chosen)) s.chosen = i;
    if (better(s.rejected, i)) s.rejected = i;
  }
  return s;
}

bool diversity_filter(const CandidateSet& set, const Selection& sel, std::size_t epsilon1, double epsilon2) {
  const double gap = set.candidates[sel.rejected].penalty - set.candidates[sel.chosen].penalty;
  return set.dedup_count() >= epsilon1 && gap >= epsilon2;
}

void SamplingConfig::validate() const {
  if (k < 2) fail(ErrorKind::config, "sampling: k must be >= 2");
  if (!(discard_fraction >= 0.0 && discard_fraction < 1.0)) fail(ErrorKind::config, "sampling: discard_fraction");
  if (!(epsilon2 >= 0.0)) fail(ErrorKind::config, "sampling: epsilon2 must be non-negative");
  sampler.validate();
}

std::uint64_t line_stream(std::uint64_t seed, std::size_t document, std::size_t line, std::size_t pass) {
  return derive_seed(seed, 0x5a3b1e, document, line, pass);
}

TokenSeq segment_tokens(const TokenSeq& target) {
  TokenSeq s(target);
  s.push_back(special::close);
  return s;
}

TokenSeq assemble_response(const corpus::Document& doc, const std::vector<TokenSeq>& targets) {
  TokenSeq out;
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    auto l = corpus::encode_response_line(doc.lines[i].source, targets.at(i));
    out.insert(out.end(), l.begin(), l.end());
  }
  out.push_back(special::eos);
  return out;
}

TokenSeq line_prefix(const TokenSeq& prompt, const corpus::Document& doc, const std::vector<TokenSeq>& targets,
                     std::size_t line) {
  TokenSeq out(prompt);
  for (std::size_t i = 0; i < line; ++i) {
    auto l = corpus::encode_response_line(doc.lines[i].source, targets.at(i));
    out.insert(out.end(), l.begin(), l.end());
  }
  out.insert(out.end(), doc.lines[line].source.begin(), doc.lines[line].source.end());
  out.push_back(special::open);
  return out;
}

CandidateSet sample_line_candidates(const Decoder& decoder, const DecodeState& state, std::size_t line_index,
                                    const corpus::LinePair& line, const std::map<TokenId, TokenId>& terms,
                                    const SamplingConfig& config, const Oracles& oracles, Rng& rng) {
  const auto mask = policy::segment_mask(*oracles.vocab);
  std::vector<RawCandidate> raw;
  for (std::size_t j = 0; j < config.k; ++j) {
    DecodeState s = state;
    auto seg = policy::sample_until(decoder, s, config.sampler, rng, special::close,
                                    config.sampler.max_segment_tokens, mask);
    if (!seg.terminated) continue;
    raw.push_back({seg.tokens, oracles.durations->duration(seg.tokens),
                   oracles.quality->score(line.source, seg.tokens, terms)});
  }
  return build_candidate_set(line_index, raw, line.source_duration, config.discard_fraction);
}

namespace {

void push_all(const Decoder& dec, DecodeState& s, const TokenSeq& t) {
  for (TokenId x : t) dec.push(s, x);
}

/// Greedy continuation used when no sampled candidate terminated.
TokenSeq fallback_target(const Decoder& dec, const DecodeState& state, const SamplingConfig& config,
                         const policy::TokenMask& mask) {
  DecodeState s = state;
  policy::SamplerConfig g = config.sampler;
  g.greedy = true;
  Rng unused(0);
  auto seg = policy::sample_until(dec, s, g, unused, special::close, config.sampler.max_segment_tokens, mask);
  return seg.terminated ? seg.tokens : TokenSeq{};
}

struct LineOutcome {
  CandidateSet set;
  std::optional<Selection> selection;
  TokenSeq extension;  // chosen (or rejected, for the maximum pass) continuation
};

/// One segment-wise pass over a document. `minimum` extends with chosen picks.
template <typename OnLine>
void segment_pass(const PolicyParams& policy, const Decoder& dec, const corpus::Document& doc, std::size_t doc_index,
                  std::size_t pass, bool minimum, const SamplingConfig& config, const Oracles& oracles,
                  std::uint64_t seed, SampleCounters& counters, OnLine&& on_line) {
  const auto mask = policy::segment_mask(*oracles.vocab);
  DecodeState st = dec.start(corpus::encode_prompt(doc, policy.config.context_window));
  for (std::size_t i = 0; i < doc.lines.size(); ++i) {
    const auto& line = doc.lines[i];
    push_all(dec, st, line.source);
    dec.push(st, special::open);
    Rng rng(line_stream(seed, doc_index, i, pass));
    LineOutcome out{sample_line_candidates(dec, st, i, line, doc.terminology, config, oracles, rng), {}, {}};
    counters.segment_samples += config.k;
    out.selection = select_pair(out.set);
    if (out.selection) {
      out.extension = out.set.candidates[minimum ? out.selection->chosen : out.selection->rejected].text;
    } else if (const auto surv = out.set.survivors(); !surv.empty()) {
      out.extension = out.set.candidates[surv.front()].text;
    } else {
      out.extension = fallback_target(dec, st, config, mask);
    }
    on_line(i, st, out);
    push_all(dec, st, out.extension);
    dec.push(st, special::close);
    dec.push(st, special::newline);
  }
}

}  // namespace

SampledDataset sspo_sample(const PolicyParams& policy, const std::vector<corpus::Document>& query,
                           const SamplingConfig& config, const Oracles& oracles, std::uint64_t seed) {
  config.validate();
  const Decoder dec(policy);
  struct Out {
    DocumentSample doc;
    SampleCounters counters;
  };
  auto results = parallel::map<Out>(
      query.size(),
      [&](std::size_t d) {
        Out o;
        o.doc.prompt_id = query[d].prompt_id;
        o.doc.lines = query[d].lines.size();
        segment_pass(policy, dec, query[d], d, 0, true, config, oracles, seed, o.counters,
                     [&](std::size_t i, const DecodeState& st, const LineOutcome& out) {
                       if (!out.selection || !diversity_filter(out.set, *out.selection, config.epsilon1,
                                                               config.epsilon2))
                         return;
                       const auto& c = out.set.candidates[out.selection->chosen];
                       const auto& r = out.set.candidates[out.selection->rejected];
                       o.doc.pairs.push_back({i, st.tokens, c.text, r.text, c.penalty, r.penalty, c.quality,
                                              r.quality, out.set.dedup_count()});
                     });
        return o;
      },
      config.workers);
  SampledDataset data;
  for (auto& r : results) {
    data.documents.push_back(std::move(r.doc));
    data.counters += r.counters;
  }
  return data;
}

std::vector<TokenSeq> fine_pass(const PolicyParams& policy, const corpus::Document& doc, std::size_t doc_index,
                                bool minimum, const SamplingConfig& config, const Oracles& oracles,
                                std::uint64_t seed, SampleCounters* counters) {
  const Decoder dec(policy);
  SampleCounters local;
  std::vector<TokenSeq> targets;
  segment_pass(policy, dec, doc, doc_index, minimum ? 0 : 1, minimum, config, oracles, seed, local,
               [&](std::size_t, const DecodeState&, const LineOutcome& out) { targets.push_back(out.extension); });
  if (counters) *counters += local;
  return targets;
}

namespace {

double penalty_sum(const corpus::Document& doc, const std::vector<TokenSeq>& targets,
                   const duration::DurationOracle& dur) {
  double s = 0.0;
  for (std::size_t i = 0; i < doc.lines.size(); ++i)
    s += duration::penalty(doc.lines[i].source_duration, dur.duration(targets[i]));
  return s;
}

}  // namespace

ResponsePairSet fine_sample(const PolicyParams& policy, const std::vector<corpus::Document>& query,
                            const SamplingConfig& config, const Oracles& oracles, std::uint64_t seed) {
  config.validate();
  struct Out {
    std::optional<ResponsePair> pair;
    SampleCounters counters;
  };
  auto results = parallel::map<Out>(
      query.size(),
      [&](std::size_t d) {
        Out o;
        const auto& doc = query[d];
        const auto best = fine_pass(policy, doc, d, true, config, oracles, seed, &o.counters);
        const auto worst = fine_pass(policy, doc, d, false, config, oracles, seed, &o.counters);
        if (best == worst) return o;
        o.pair = ResponsePair{doc.prompt_id,
                              corpus::encode_prompt(doc, policy.config.context_window),
                              assemble_response(doc, best),
                              assemble_response(doc, worst),
                              penalty_sum(doc, best, *oracles.durations),
                              penalty_sum(doc, worst, *oracles.durations)};
        return o;
      },
      config.workers);
  ResponsePairSet set;
  for (auto& r : results) {
    set.counters += r.counters;
    if (r.pair)
      set.pairs.push_back(std::move(*r.pair));
    else
      ++set.skipped;
  }
  return set;
}

ResponsePairSet coarse_sample(const PolicyParams& policy, const std::vector<corpus::Document>& query,
                              const SamplingConfig& config, const Oracles& oracles, std::uint64_t seed) {
  config.validate();
  const Decoder dec(policy);
  struct Out {
    std::optional<ResponsePair> pair;
    std::size_t unparseable = 0;
    SampleCounters counters;
  };
  auto results = parallel::map<Out>(
      query.size(),
      [&](std::size_t d) {
        Out o;
        const auto& doc = query[d];
        const TokenSeq prompt = corpus::encode_prompt(doc, policy.config.context_window);
        Rng rng(derive_seed(seed, 0xc0a25e, d));
        struct Ranked {
          TokenSeq response;
          double sum;
        };
        std::vector<Ranked> ranked;
        for (std::size_t j = 0; j < config.k; ++j) {
          auto r = policy::generate_response(dec, prompt, config.sampler, rng, config.max_response_tokens);
          ++o.counters.response_samples;
          if (!r.terminated) {
            ++o.unparseable;
            continue;
          }
          const auto parsed = corpus::parse_response(oracles.vocab->decode(r.tokens), doc, *oracles.vocab);
          if (!std::all_of(parsed.efficient.begin(), parsed.efficient.end(), [](bool b) { return b; })) {
            ++o.unparseable;
            continue;
          }
          std::vector<TokenSeq> targets;
          for (const auto& t : parsed.targets) targets.push_back(*t);
          r.tokens.push_back(special::eos);
          ranked.push_back({std::move(r.tokens), penalty_sum(doc, targets, *oracles.durations)});
        }
        if (ranked.size() < 2) return o;
        std::size_t lo = 0, hi = 0;
        for (std::size_t j = 1; j < ranked.size(); ++j) {
          if (ranked[j].sum < ranked[lo].sum) lo = j;
          if (ranked[j].sum > ranked[hi].sum) hi = j;
        }
        if (ranked[lo].response == ranked[hi].response) return o;
        o.pair = ResponsePair{doc.prompt_id, prompt, ranked[lo].response, ranked[hi].response, ranked[lo].sum,
                              ranked[hi].sum};
        return o;
      },
      config.workers);
  ResponsePairSet set;
  for (auto& r : results) {
    set.counters += r.counters;
    set.unparseable += r.unparseable;
    if (r.pair)
      set.pairs.push_back(std::move(*r.pair));
    else
      ++set.skipped;
  }
  return set;
}

std::vector<Trajectory> ppo_rollout(const PolicyParams& policy, const std::vector<corpus::Document>& query,
                                    const SamplingConfig& config, const Oracles& oracles, const ValueFn& value,
                                    std::uint64_t seed, SampleCounters* counters) {
  config.sampler.validate();
  const Decoder dec(policy);
  const auto mask = policy::segment_mask(*oracles.vocab);
  const std::size_t V = policy.config.vocab_size;
  auto trajectories = parallel::map<Trajectory>(
      query.size(),
      [&](std::size_t d) {
        const auto& doc = query[d];
        Trajectory tr;
        tr.prompt_id = doc.prompt_id;
        DecodeState st = dec.start(corpus::encode_prompt(doc, policy.config.context_window));
        std::vector<double> ls(V);
        for (std::size_t i = 0; i < doc.lines.size(); ++i) {
          const auto& line = doc.lines[i];
          push_all(dec, st, line.source);
          dec.push(st, special::open);
          Step step;
          step.prefix = st.tokens;
          step.value = value ? value(step.prefix) : 0.0;
          Rng rng(line_stream(seed, d, i, 3));
          bool done = false;
          while (!done) {
            policy::log_softmax(st.last_logits, ls);
            TokenId t = special::close;
            if (step.action.size() < config.sampler.max_segment_tokens)
              t = policy::draw_token(st.last_logits, config.sampler, rng, mask);
            step.old_logprob += ls[static_cast<std::size_t>(t)];
            dec.push(st, t);
            if (t == special::close)
              done = true;
            else
              step.action.push_back(t);
          }
          step.reward = -duration::penalty(line.source_duration, oracles.durations->duration(step.action));
          dec.push(st, special::newline);
          tr.steps.push_back(std::move(step));
        }
        return tr;
      },
      config.workers);
  if (counters)
    for (const auto& t : trajectories) counters->segment_samples += t.steps.size();
  return trajectories;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write " + path.string());
  return out;
}

std::vector<json> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const std::exception& e) {
      fail(ErrorKind::data, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    if (out.back().value("schema_version", -1) != kSampleSchemaVersion)
      fail(ErrorKind::data, path.string() + ":" + std::to_string(n) + ": unsupported schema_version");
  }
  return out;
}

}  // namespace

void write_sampled(const std::filesystem::path& path, const SampledDataset& data) {
  auto out = open_out(path);
  for (const auto& d : data.documents) {
    out << json{{"schema_version", kSampleSchemaVersion}, {"type", "document"}, {"prompt_id", d.prompt_id},
                {"lines", d.lines}, {"retained", d.pairs.size()}}
               .dump()
        << '\n';
    for (const auto& p : d.pairs)
      out << json{{"schema_version", kSampleSchemaVersion},
                  {"type", "pair"},
                  {"prompt_id", d.prompt_id},
                  {"line_index", p.line_index},
                  {"prefix_hash", hex64(hash_tokens(p.prefix))},
                  {"prefix", p.prefix},
                  {"chosen", p.chosen},
                  {"rejected", p.rejected},
                  {"chosen_penalty", p.chosen_penalty},
                  {"rejected_penalty", p.rejected_penalty},
                  {"chosen_quality", p.chosen_quality},
                  {"rejected_quality", p.rejected_quality},
                  {"dedup_count", p.dedup_count}}
                 .dump()
          << '\n';
  }
  out << json{{"schema_version", kSampleSchemaVersion}, {"type", "counters"},
              {"segment_samples", data.counters.segment_samples},
              {"response_samples", data.counters.response_samples}}
             .dump()
      << '\n';
}

SampledDataset read_sampled(const std::filesystem::path& path) {
  SampledDataset data;
  for (const auto& r : read_records(path)) {
    const std::string type = r.at("type");
    if (type == "document") {
      data.documents.push_back({r.at("prompt_id"), {}, r.at("lines")});
    } else if (type == "pair") {
      if (data.documents.empty() || data.documents.back().prompt_id != r.at("prompt_id"))
        fail(ErrorKind::data, "sampled dataset: pair record outside its document");
      PreferencePair p;
      p.line_index = r.at("line_index");
      p.prefix = r.at("prefix").get<TokenSeq>();
      p.chosen = r.at("chosen").get<TokenSeq>();
      p.rejected = r.at("rejected").get<TokenSeq>();
      p.chosen_penalty = r.at("chosen_penalty");
      p.rejected_penalty = r.at("rejected_penalty");
      p.chosen_quality = r.at("chosen_quality");
      p.rejected_quality = r.at("rejected_quality");
      p.dedup_count = r.at("dedup_count");
      if (hex64(hash_tokens(p.prefix)) != r.at("prefix_hash").get<std::string>())
        fail(ErrorKind::data, "sampled dataset: prefix hash mismatch");
      data.documents.back().pairs.push_back(std::move(p));
    } else if (type == "counters") {
      data.counters.segment_samples = r.at("segment_samples");
      data.counters.response_samples = r.at("response_samples");
    }
  }
  return data;
}

void write_response_pairs(const std::filesystem::path& path, const ResponsePairSet& data) {
  auto out = open_out(path);
  for (const auto& p : data.pairs)
    out << json{{"schema_version", kSampleSchemaVersion}, {"type", "pair"},         {"prompt_id", p.prompt_id},
                {"prompt", p.prompt},                     {"chosen", p.chosen},      {"rejected", p.rejected},
                {"chosen_sum", p.chosen_sum},             {"rejected_sum", p.rejected_sum}}
               .dump()
        << '\n';
  out << json{{"schema_version", kSampleSchemaVersion}, {"type", "summary"}, {"skipped", data.skipped},
              {"unparseable", data.unparseable}, {"segment_samples", data.counters.segment_samples},
              {"response_samples", data.counters.response_samples}}
             .dump()
      << '\n';
}

ResponsePairSet read_response_pairs(const std::filesystem::path& path) {
  ResponsePairSet set;
  for (const auto& r : read_records(path)) {
    if (r.at("type") == "pair") {
      set.pairs.push_back({r.at("prompt_id"), r.at("prompt").get<TokenSeq>(), r.at("chosen").get<TokenSeq>(),
                           r.at("rejected").get<TokenSeq>(), r.at("chosen_sum"), r.at("rejected_sum")});
    } else {
      set.skipped = r.at("skipped");
      set.unparseable = r.at("unparseable");
      set.counters.segment_samples = r.at("segment_samples");
      set.counters.response_samples = r.at("response_samples");
    }
  }
  return set;
}

void write_rollouts(const std::filesystem::path& path, const std::vector<Trajectory>& data) {
  auto out = open_out(path);
  for (const auto& t : data)
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const auto& s = t.steps[i];
      out << json{{"schema_version", kSampleSchemaVersion},
                  {"prompt_id", t.prompt_id},
                  {"step", i},
                  {"prefix_hash", hex64(hash_tokens(s.prefix))},
                  {"action", s.action},
                  {"reward", s.reward},
                  {"value", s.value},
                  {"advantage", s.advantage},
                  {"delta", s.delta}}
                 .dump()
          << '\n';
    }
}

}  // namespace sampling
}  // namespace sspo
