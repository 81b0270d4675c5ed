// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sspo/rng.hpp"

namespace sspo::corpus {
namespace {

using nlohmann::json;

constexpr const char* kPreamble =
    "Translate each line so that the spoken translation matches the duration of the source line. "
    "Output every source line followed by its translation in parentheses, one line per source line, "
    "without merging lines.";

std::string syllables(Rng& rng, std::size_t count, bool source) {
  static constexpr const char* kSourceOnsets[] = {"zh", "x", "q", "sh", "ch", "j", "b", "d", "g", "l", "m", "n"};
  static constexpr const char* kSourceNuclei[] = {"ao", "ei", "ia", "ou", "an", "en", "ui", "a", "i", "u"};
  static constexpr const char* kTargetOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w"};
  static constexpr const char* kTargetNuclei[] = {"a", "e", "i", "o", "u", "y"};
  std::string s;
  for (std::size_t i = 0; i < count; ++i) {
    if (source) {
      s += kSourceOnsets[rng.below(std::size(kSourceOnsets))];
      s += kSourceNuclei[rng.below(std::size(kSourceNuclei))];
    } else {
      s += kTargetOnsets[rng.below(std::size(kTargetOnsets))];
      s += kTargetNuclei[rng.below(std::size(kTargetNuclei))];
    }
  }
  return s;
}

std::string unique_word(Rng& rng, const Vocabulary& vocab, std::size_t syl, bool source) {
  for (;;) {
    auto w = syllables(rng, syl, source);
    if (!vocab.contains(w)) return w;
    ++syl;  // the short-word space can run out
  }
}

constexpr const char* kFunctionWords[] = {"the", "a", "so", "oh", "just", "well", "um", "now"};

}  // namespace

void SyntheticTaskSpec::validate() const {
  auto bad = [](const std::string& why) { fail(ErrorKind::config, "invalid task spec: " + why); };
  if (source_vocab_size < 1) bad("source_vocab_size must be >= 1");
  if (synonym_set_size < 2) bad("synonym_set_size must be >= 2");
  if (line_length_min < 1 || line_length_max < line_length_min) bad("line_length_range");
  if (lines_per_document < 1) bad("lines_per_document must be >= 1");
  if (documents < 2) bad("documents must be >= 2");
  if (!(query_fraction > 0.0 && query_fraction < 1.0)) bad("query_fraction must be in (0,1)");
  if (function_words > std::size(kFunctionWords)) bad("at most 8 function words");
  if (!(function_word_rate >= 0.0 && function_word_rate < 1.0)) bad("function_word_rate");
  if (!(pause >= 0.0)) bad("pause");
  if (!(source_token_min > 0.0 && source_token_max >= source_token_min)) bad("source token durations");
  if (!(synonym_ratio_min > 0.0 && synonym_ratio_max / synonym_ratio_min >= 1.5))
    bad("synonym durations must span at least 1.5x");
}

bool QualityKey::is_synonym(TokenId source, TokenId target) const {
  if (source < 0 || static_cast<std::size_t>(source) >= synonyms.size()) return false;
  const auto& s = synonyms[static_cast<std::size_t>(source)];
  return std::find(s.begin(), s.end(), target) != s.end();
}

Task generate_task(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  Task task;
  task.spec = spec;
  task.seed = seed;
  Vocabulary& vocab = task.vocab;

  // The duration table and word shapes depend only on duration_table_seed, so
  // different corpus seeds share one "language pair".
  Rng table_rng(derive_seed(spec.duration_table_seed, 1));
  std::vector<TokenId> source_ids;
  std::vector<double> durations(special::count, 0.0);
  for (std::size_t i = 0; i < spec.source_vocab_size; ++i) {
    const double d = table_rng.uniform(spec.source_token_min, spec.source_token_max);
    const std::size_t syl = 1 + static_cast<std::size_t>(d / 0.15);
    source_ids.push_back(vocab.add(unique_word(table_rng, vocab, syl, true), TokenClass::source));
    durations.push_back(d);
  }
  task.key.synonyms.assign(vocab.size() + spec.source_vocab_size * spec.synonym_set_size + 16, {});
  const std::size_t m = spec.synonym_set_size;
  for (TokenId src : source_ids) {
    const double d = durations[static_cast<std::size_t>(src)];
    std::vector<double> ratios(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double base = spec.synonym_ratio_min +
                          (spec.synonym_ratio_max - spec.synonym_ratio_min) * static_cast<double>(j) /
                              static_cast<double>(m - 1);
      // interior synonyms jitter; the extremes pin the span
      const double jitter = (j == 0 || j + 1 == m) ? 0.0 : table_rng.uniform(-0.03, 0.03);
      ratios[j] = base + jitter;
    }
    for (std::size_t j = m; j-- > 1;) std::swap(ratios[j], ratios[table_rng.below(j + 1)]);
    for (double r : ratios) {
      const double td = d * r;
      const std::size_t syl = 1 + static_cast<std::size_t>(td / 0.12);
      const TokenId t = vocab.add(unique_word(table_rng, vocab, syl, false), TokenClass::target);
      durations.push_back(td);
      task.key.synonyms[static_cast<std::size_t>(src)].push_back(t);
    }
  }
  std::vector<TokenId> function_ids;
  for (std::size_t i = 0; i < spec.function_words; ++i) {
    function_ids.push_back(vocab.add(kFunctionWords[i], TokenClass::function));
    durations.push_back(table_rng.uniform(0.06, 0.12));
  }
  task.key.synonyms.resize(vocab.size());
  task.durations = duration::DurationOracle(std::move(durations), spec.pause);

  Rng rng(derive_seed(seed, 2));
  auto make_document = [&](std::size_t index) {
    Document doc;
    char id[32];
    std::snprintf(id, sizeof id, "doc-%06zu", index);
    doc.prompt_id = id;
    std::vector<TokenId> seen;
    for (std::size_t i = 0; i < spec.lines_per_document; ++i) {
      LinePair line;
      const std::size_t len =
          spec.line_length_min + rng.below(spec.line_length_max - spec.line_length_min + 1);
      for (std::size_t j = 0; j < len; ++j) {
        line.source.push_back(source_ids[rng.below(source_ids.size())]);
        seen.push_back(line.source.back());
      }
      doc.lines.push_back(std::move(line));
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    const std::size_t terms = std::min(seen.size(), static_cast<std::size_t>(rng.below(spec.max_terms + 1)));
    for (std::size_t t = 0; t < terms; ++t) {
      const std::size_t pick = t + rng.below(seen.size() - t);
      std::swap(seen[t], seen[pick]);
      const auto& syn = task.key.synonyms[static_cast<std::size_t>(seen[t])];
      doc.terminology[seen[t]] = syn[rng.below(syn.size())];
    }
    for (auto& line : doc.lines) {
      for (TokenId s : line.source) {
        if (!function_ids.empty() && rng.bernoulli(spec.function_word_rate))
          line.reference.push_back(function_ids[rng.below(function_ids.size())]);
        auto term = doc.terminology.find(s);
        if (term != doc.terminology.end()) {
          line.reference.push_back(term->second);
        } else {
          const auto& syn = task.key.synonyms[static_cast<std::size_t>(s)];
          line.reference.push_back(syn[rng.below(syn.size())]);
        }
      }
      line.source_duration = task.durations.duration(line.source);
      line.reference_duration = task.durations.duration(line.reference);
    }
    return doc;
  };

  std::vector<Document> pool;
  for (std::size_t i = 0; i < spec.documents; ++i) pool.push_back(make_document(i));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t j = order.size(); j-- > 1;) std::swap(order[j], order[rng.below(j + 1)]);
  const auto query_count = static_cast<std::size_t>(
      std::floor(spec.query_fraction * static_cast<double>(spec.documents) + 1e-9));
  std::vector<bool> is_query(pool.size(), false);
  for (std::size_t i = 0; i < query_count; ++i) is_query[order[i]] = true;
  for (std::size_t i = 0; i < pool.size(); ++i)
    (is_query[i] ? task.split.query : task.split.demonstration).push_back(std::move(pool[i]));
  for (std::size_t i = 0; i < spec.test_documents; ++i)
    task.split.test.push_back(make_document(spec.documents + i));
  return task;
}

TokenSeq encode_prompt(const Document& doc, std::size_t context_window) {
  TokenSeq out{special::bos, special::task};
  if (!doc.terminology.empty()) {
    out.push_back(special::terms);
    for (const auto& [s, t] : doc.terminology) {
      out.push_back(s);
      out.push_back(t);
      out.push_back(special::newline);
    }
  }
  out.push_back(special::lines);
  for (const auto& line : doc.lines) {
    out.insert(out.end(), line.source.begin(), line.source.end());
    out.push_back(special::newline);
  }
  out.push_back(special::answer);
  if (out.size() > context_window)
    fail(ErrorKind::capacity, "prompt for " + doc.prompt_id + " has " + std::to_string(out.size()) +
                                  " tokens; context window is " + std::to_string(context_window));
  return out;
}

std::string render_prompt(const Document& doc, const Vocabulary& vocab, std::size_t context_window) {
  encode_prompt(doc, context_window);  // capacity check
  std::string out = kPreamble;
  out += '\n';
  if (!doc.terminology.empty()) {
    out += "Terminology:\n";
    for (const auto& [s, t] : doc.terminology) out += vocab.text(s) + " - " + vocab.text(t) + "\n";
  }
  out += "Lines:\n";
  for (const auto& line : doc.lines) out += vocab.join_words(line.source) + "\n";
  out += "Translation:";
  return out;
}

TokenSeq encode_response_line(const TokenSeq& source, const TokenSeq& target) {
  TokenSeq out(source);
  out.push_back(special::open);
  out.insert(out.end(), target.begin(), target.end());
  out.push_back(special::close);
  out.push_back(special::newline);
  return out;
}

TokenSeq encode_reference_response(const Document& doc) {
  TokenSeq out;
  for (const auto& line : doc.lines) {
    auto l = encode_response_line(line.source, line.reference);
    out.insert(out.end(), l.begin(), l.end());
  }
  out.push_back(special::eos);
  return out;
}

std::string render_response(const FormattedResponse& r, const Vocabulary& vocab) {
  std::string out;
  for (const auto& e : r.entries) out += vocab.join_words(e.source) + "(" + vocab.join_words(e.target) + ")\n";
  return out;
}

namespace {

std::optional<FormattedResponse::Entry> parse_line(std::string line, const Vocabulary& vocab) {
  while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t')) line.pop_back();
  const auto open = line.find('(');
  if (open == std::string::npos || open == 0 || line.back() != ')') return std::nullopt;
  const std::string src = line.substr(0, open);
  const std::string tgt = line.substr(open + 1, line.size() - open - 2);
  if (src.find_first_of("()") != std::string::npos || tgt.find_first_of("()") != std::string::npos)
    return std::nullopt;
  auto words = [&](const std::string& s) -> std::optional<TokenSeq> {
    TokenSeq out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) {
      if (!vocab.contains(w)) return std::nullopt;
      const TokenId id = vocab.id(w);
      if (!vocab.is_word(id)) return std::nullopt;
      out.push_back(id);
    }
    return out;
  };
  auto s = words(src);
  auto t = words(tgt);
  if (!s || !t || s->empty()) return std::nullopt;
  return FormattedResponse::Entry{std::move(*s), std::move(*t)};
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(std::move(cur));
  return lines;
}

}  // namespace

FormattedResponse parse_formatted(const std::string& text, const Vocabulary& vocab) {
  FormattedResponse r;
  for (auto& l : split_lines(text))
    if (auto e = parse_line(l, vocab)) r.entries.push_back(std::move(*e));
  return r;
}

ParsedResponse parse_response(const std::string& text, const Document& doc, const Vocabulary& vocab) {
  std::vector<std::optional<FormattedResponse::Entry>> parsed;
  ParsedResponse out;
  for (auto& l : split_lines(text)) {
    parsed.push_back(parse_line(l, vocab));
    if (parsed.back()) out.response.entries.push_back(*parsed.back());
  }
  const std::size_t n = doc.lines.size();
  out.efficient.assign(n, false);
  out.targets.assign(n, std::nullopt);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = cursor; j < parsed.size(); ++j) {
      if (parsed[j] && parsed[j]->source == doc.lines[i].source) {
        out.efficient[i] = true;
        out.targets[i] = parsed[j]->target;
        cursor = j + 1;
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

TokenSeq words_from(const json& j, const Vocabulary& vocab) {
  TokenSeq out;
  std::istringstream in(j.get<std::string>());
  std::string w;
  while (in >> w) out.push_back(vocab.id(w));
  return out;
}

json spec_to_json(const SyntheticTaskSpec& s) {
  return json{{"source_vocab_size", s.source_vocab_size},
              {"synonym_set_size", s.synonym_set_size},
              {"duration_table_seed", s.duration_table_seed},
              {"line_length_min", s.line_length_min},
              {"line_length_max", s.line_length_max},
              {"lines_per_document", s.lines_per_document},
              {"documents", s.documents},
              {"test_documents", s.test_documents},
              {"query_fraction", s.query_fraction},
              {"function_words", s.function_words},
              {"function_word_rate", s.function_word_rate},
              {"max_terms", s.max_terms},
              {"pause", s.pause},
              {"source_token_min", s.source_token_min},
              {"source_token_max", s.source_token_max},
              {"synonym_ratio_min", s.synonym_ratio_min},
              {"synonym_ratio_max", s.synonym_ratio_max}};
}

SyntheticTaskSpec spec_from_json(const json& j) {
  SyntheticTaskSpec s;
  s.source_vocab_size = j.at("source_vocab_size");
  s.synonym_set_size = j.at("synonym_set_size");
  s.duration_table_seed = j.at("duration_table_seed");
  s.line_length_min = j.at("line_length_min");
  s.line_length_max = j.at("line_length_max");
  s.lines_per_document = j.at("lines_per_document");
  s.documents = j.at("documents");
  s.test_documents = j.at("test_documents");
  s.query_fraction = j.at("query_fraction");
  s.function_words = j.at("function_words");
  s.function_word_rate = j.at("function_word_rate");
  s.max_terms = j.at("max_terms");
  s.pause = j.at("pause");
  s.source_token_min = j.at("source_token_min");
  s.source_token_max = j.at("source_token_max");
  s.synonym_ratio_min = j.at("synonym_ratio_min");
  s.synonym_ratio_max = j.at("synonym_ratio_max");
  return s;
}

}  // namespace

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs,
                     const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write " + path.string());
  for (const auto& doc : docs) {
    json lines = json::array();
    for (const auto& l : doc.lines)
      lines.push_back({{"source", vocab.join_words(l.source)},
                       {"reference", vocab.join_words(l.reference)},
                       {"dur_s", l.source_duration},
                       {"dur_t", l.reference_duration}});
    json terms = json::object();
    for (const auto& [s, t] : doc.terminology) terms[vocab.text(s)] = vocab.text(t);
    json rec{{"schema_version", kDatasetSchemaVersion},
             {"prompt_id", doc.prompt_id},
             {"lines", std::move(lines)},
             {"terminology", std::move(terms)}};
    out << rec.dump() << '\n';
  }
}

std::vector<Document> read_documents(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot read " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      if (rec.at("schema_version").get<int>() != kDatasetSchemaVersion)
        fail(ErrorKind::data, "unsupported dataset schema version");
      Document doc;
      doc.prompt_id = rec.at("prompt_id");
      for (const auto& l : rec.at("lines")) {
        LinePair p;
        p.source = words_from(l.at("source"), vocab);
        p.reference = words_from(l.at("reference"), vocab);
        p.source_duration = l.at("dur_s");
        p.reference_duration = l.at("dur_t");
        if (p.source.empty() || !(p.source_duration > 0) || !(p.reference_duration > 0))
          fail(ErrorKind::data, "invalid line record");
        doc.lines.push_back(std::move(p));
      }
      for (const auto& [s, t] : rec.at("terminology").items())
        doc.terminology[vocab.id(s)] = vocab.id(t.get<std::string>());
      docs.push_back(std::move(doc));
    } catch (const json::exception& e) {
      fail(ErrorKind::data, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

void write_task(const std::filesystem::path& dir, const Task& task) {
  std::filesystem::create_directories(dir);
  json vocab = json::array();
  for (std::size_t i = 0; i < task.vocab.size(); ++i) {
    static constexpr const char* kClass[] = {"special", "source", "target", "function"};
    vocab.push_back({task.vocab.tokens()[i], kClass[static_cast<int>(task.vocab.classes()[i])]});
  }
  json key = json::object();
  for (std::size_t s = 0; s < task.key.synonyms.size(); ++s) {
    if (task.key.synonyms[s].empty()) continue;
    json syn = json::array();
    for (TokenId t : task.key.synonyms[s]) syn.push_back(task.vocab.text(t));
    key[task.vocab.text(static_cast<TokenId>(s))] = std::move(syn);
  }
  json j{{"schema_version", kDatasetSchemaVersion},
         {"seed", task.seed},
         {"spec", spec_to_json(task.spec)},
         {"vocabulary", std::move(vocab)},
         {"durations", task.durations.table()},
         {"pause", task.durations.pause()},
         {"quality_key", std::move(key)}};
  std::ofstream out(dir / "task.json", std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write " + (dir / "task.json").string());
  out << j.dump(1) << '\n';
  out.close();
  write_documents(dir / "demonstration.jsonl", task.split.demonstration, task.vocab);
  write_documents(dir / "query.jsonl", task.split.query, task.vocab);
  write_documents(dir / "test.jsonl", task.split.test, task.vocab);
}

Task read_task(const std::filesystem::path& dir) {
  std::ifstream in(dir / "task.json", std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot read " + (dir / "task.json").string());
  Task task;
  try {
    const json j = json::parse(in);
    if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
      fail(ErrorKind::data, "unsupported task schema version");
    task.seed = j.at("seed");
    task.spec = spec_from_json(j.at("spec"));
    const auto& v = j.at("vocabulary");
    for (std::size_t i = special::count; i < v.size(); ++i) {
      const std::string cls = v[i].at(1);
      task.vocab.add(v[i].at(0), cls == "source"   ? TokenClass::source
                                 : cls == "target" ? TokenClass::target
                                                   : TokenClass::function);
    }
    task.durations = duration::DurationOracle(j.at("durations").get<std::vector<double>>(), j.at("pause"));
    task.key.synonyms.assign(task.vocab.size(), {});
    for (const auto& [s, syn] : j.at("quality_key").items())
      for (const auto& t : syn) task.key.synonyms[static_cast<std::size_t>(task.vocab.id(s))].push_back(task.vocab.id(t.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("task.json: ") + e.what());
  }
  task.split.demonstration = read_documents(dir / "demonstration.jsonl", task.vocab);
  task.split.query = read_documents(dir / "query.jsonl", task.vocab);
  task.split.test = read_documents(dir / "test.jsonl", task.vocab);
  return task;
}

}  // namespace sspo::corpus
