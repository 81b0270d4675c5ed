// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sspo/common.hpp"

namespace sspo {

enum class TokenClass { special, source, target, function };

/// Structural tokens. Their ids are fixed and precede every word token.
namespace special {
inline constexpr TokenId bos = 0;
inline constexpr TokenId task = 1;     // stands for the instruction preamble
inline constexpr TokenId terms = 2;    // opens the terminology block
inline constexpr TokenId lines = 3;    // opens the lines-to-translate block
inline constexpr TokenId answer = 4;   // prompt ending
inline constexpr TokenId eos = 5;
inline constexpr TokenId open = 6;     // "("
inline constexpr TokenId close = 7;    // ")"
inline constexpr TokenId newline = 8;
inline constexpr TokenId count = 9;
}  // namespace special

/// Dense token table: ids 0..V-1, specials first.
class Vocabulary {
 public:
  Vocabulary();

  TokenId add(std::string text, TokenClass cls);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& text(TokenId id) const;
  TokenClass token_class(TokenId id) const;
  bool contains(std::string_view text) const;
  TokenId id(std::string_view text) const;  // throws vocabulary error

  bool is_word(TokenId id) const { return token_class(id) != TokenClass::special; }
  bool is_content(TokenId id) const {
    const auto c = token_class(id);
    return c == TokenClass::source || c == TokenClass::target;
  }
  bool is_function(TokenId id) const { return token_class(id) == TokenClass::function; }

  /// Space-separated words; "(" and ")" are standalone tokens, '\n' is the
  /// newline token. Unknown words raise a vocabulary error.
  TokenSeq encode(std::string_view text) const;
  /// Inverse of encode on well-formed text: "a b(c d)\n".
  std::string decode(const TokenSeq& ids) const;

  std::string join_words(const TokenSeq& ids) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<TokenClass>& classes() const noexcept { return classes_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<TokenClass> classes_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace sspo
