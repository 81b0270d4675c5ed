// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/common.hpp"

#include <cstdio>

namespace sspo {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::training:
      return 4;
    default:
      return 3;
  }
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_tokens(const TokenSeq& tokens) {
  return fnv1a(tokens.data(), tokens.size() * sizeof(TokenId));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace sspo
