// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sspo {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

/// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  config,      // invalid configuration or task spec
  data,        // malformed input data, I/O
  vocabulary,  // token outside a table
  capacity,    // sequence exceeds the context window
  domain,      // argument outside its mathematical domain
  empty_input,
  shape,
  training,    // divergence during optimisation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

int exit_code_for(ErrorKind kind) noexcept;

/// splitmix64 finalizer; used to derive independent rng streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) noexcept {
  std::uint64_t s = mix64(seed);
  ((s = mix64(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

/// FNV-1a, for content hashes of configs and prefixes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_tokens(const TokenSeq& tokens);
std::string hex64(std::uint64_t v);

}  // namespace sspo
