// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "sspo/model.hpp"

namespace sspo::policy {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic "SSPOCKPT", u32 version, u64 header length, JSON
/// header (vocabulary, model config, shapes, seed lineage, caller metadata),
/// then the base and adapter vectors as little-endian doubles.
void write_checkpoint(const std::filesystem::path& path, const PolicyParams& params,
                      const std::string& metadata_json = "{}");

struct Checkpoint {
  PolicyParams params;
  std::string metadata_json;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace sspo::policy
