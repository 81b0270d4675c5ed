// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sspo/common.hpp"
#include "sspo/duration.hpp"
#include "sspo/vocab.hpp"

namespace sspo::corpus {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr std::size_t kDefaultContextWindow = 1024;

/// Synthetic dubbing-translation task. A "translation" substitutes each source
/// word with one of its synonyms and occasionally inserts a function word.
struct SyntheticTaskSpec {
  std::size_t source_vocab_size = 30;
  std::size_t synonym_set_size = 5;
  std::uint64_t duration_table_seed = 17;
  std::size_t line_length_min = 3;
  std::size_t line_length_max = 6;
  std::size_t lines_per_document = 10;
  std::size_t documents = 1000;       // demonstration + query
  std::size_t test_documents = 100;
  double query_fraction = 0.03;
  std::size_t function_words = 6;
  double function_word_rate = 0.2;  // per gap, in references
  std::size_t max_terms = 2;          // terminology entries per document
  double pause = 0.1;                 // seconds added per line
  double source_token_min = 0.15;     // seconds
  double source_token_max = 0.35;
  double synonym_ratio_min = 0.85;    // target/source duration ratio range
  double synonym_ratio_max = 1.45;

  void validate() const;  // config error on violation
};

struct LinePair {
  TokenSeq source;
  TokenSeq reference;
  double source_duration = 0.0;
  double reference_duration = 0.0;
};

struct Document {
  std::string prompt_id;
  std::vector<LinePair> lines;
  std::map<TokenId, TokenId> terminology;  // source word -> pinned target word
};

struct DatasetSplit {
  std::vector<Document> demonstration;
  std::vector<Document> query;
  std::vector<Document> test;
};

/// Ground truth for the quality oracle: the valid phrasings of each source word.
struct QualityKey {
  std::vector<std::vector<TokenId>> synonyms;  // indexed by source token id

  bool is_synonym(TokenId source, TokenId target) const;
};

struct Task {
  SyntheticTaskSpec spec;
  std::uint64_t seed = 0;
  Vocabulary vocab;
  duration::DurationOracle durations;
  QualityKey key;
  DatasetSplit split;
};

Task generate_task(const SyntheticTaskSpec& spec, std::uint64_t seed);

/// Prompt tokens: <bos> <task> [<terms> (src tgt \n)*] <lines> (src.. \n)* <answer>.
TokenSeq encode_prompt(const Document& doc, std::size_t context_window = kDefaultContextWindow);
/// Human-readable prompt; the terminology block is omitted when empty.
std::string render_prompt(const Document& doc, const Vocabulary& vocab,
                          std::size_t context_window = kDefaultContextWindow);

/// One response line: source tokens, "(", target tokens, ")", newline.
TokenSeq encode_response_line(const TokenSeq& source, const TokenSeq& target);
/// Full response token sequence terminated by <eos>.
TokenSeq encode_reference_response(const Document& doc);

struct FormattedResponse {
  struct Entry {
    TokenSeq source;
    TokenSeq target;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;
  bool operator==(const FormattedResponse&) const = default;
};

std::string render_response(const FormattedResponse& r, const Vocabulary& vocab);
/// Well-formed "source(target)" lines only, in text order.
FormattedResponse parse_formatted(const std::string& text, const Vocabulary& vocab);

struct ParsedResponse {
  FormattedResponse response;
  std::vector<bool> efficient;                  // per document line
  std::vector<std::optional<TokenSeq>> targets;  // target of each efficient line
};

/// Line i is efficient iff some text line, in order, is "source(target)" with
/// source equal to the document's i-th source line. Unmatched lines are
/// flagged false; later lines are still judged.
ParsedResponse parse_response(const std::string& text, const Document& doc, const Vocabulary& vocab);

// Line-delimited dataset records and the task description file.
void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs,
                     const Vocabulary& vocab);
std::vector<Document> read_documents(const std::filesystem::path& path, const Vocabulary& vocab);
void write_task(const std::filesystem::path& dir, const Task& task);
Task read_task(const std::filesystem::path& dir);

}  // namespace sspo::corpus
