// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/vocab.hpp"

#include <cctype>

namespace sspo {

Vocabulary::Vocabulary() {
  for (const char* s : {"<bos>", "<task>", "<terms>", "<lines>", "<answer>", "<eos>", "(", ")", "\n"})
    add(s, TokenClass::special);
}

TokenId Vocabulary::add(std::string text, TokenClass cls) {
  if (index_.count(text)) fail(ErrorKind::config, "duplicate token '" + text + "'");
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(text, id);
  tokens_.push_back(std::move(text));
  classes_.push_back(cls);
  return id;
}

const std::string& Vocabulary::text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    fail(ErrorKind::vocabulary, "token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenClass Vocabulary::token_class(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= classes_.size())
    fail(ErrorKind::vocabulary, "token id out of range: " + std::to_string(id));
  return classes_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view text) const { return index_.count(std::string(text)) > 0; }

TokenId Vocabulary::id(std::string_view text) const {
  auto it = index_.find(std::string(text));
  if (it == index_.end()) fail(ErrorKind::vocabulary, "unknown token '" + std::string(text) + "'");
  return it->second;
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(id(word));
      word.clear();
    }
  };
  for (char c : text) {
    if (c == '(' || c == ')' || c == '\n') {
      flush();
      out.push_back(c == '(' ? special::open : c == ')' ? special::close : special::newline);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::string out;
  bool need_space = false;
  for (TokenId t : ids) {
    switch (t) {
      case special::open:
        out += '(';
        need_space = false;
        break;
      case special::close:
        out += ')';
        need_space = false;
        break;
      case special::newline:
        out += '\n';
        need_space = false;
        break;
      default:
        if (need_space) out += ' ';
        out += text(t);
        need_space = true;
    }
  }
  return out;
}

std::string Vocabulary::join_words(const TokenSeq& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += text(ids[i]);
  }
  return out;
}

}  // namespace sspo
