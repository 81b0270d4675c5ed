// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace sspo::policy {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'S', 'P', 'O', 'C', 'K', 'P', 'T'};

const char* class_name(TokenClass c) {
  switch (c) {
    case TokenClass::special: return "special";
    case TokenClass::source: return "source";
    case TokenClass::target: return "target";
    case TokenClass::function: return "function";
  }
  return "special";
}

TokenClass class_from(const std::string& s) {
  if (s == "special") return TokenClass::special;
  if (s == "source") return TokenClass::source;
  if (s == "target") return TokenClass::target;
  if (s == "function") return TokenClass::function;
  fail(ErrorKind::data, "checkpoint: unknown token class " + s);
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) fail(ErrorKind::data, "checkpoint: truncated file");
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const PolicyParams& params,
                      const std::string& metadata_json) {
  if (!params.vocab) fail(ErrorKind::data, "checkpoint: params without vocabulary");
  json h;
  const auto& c = params.config;
  h["model"] = {{"vocab_size", c.vocab_size},   {"d_model", c.d_model},     {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},         {"d_ff", c.d_ff},           {"context_window", c.context_window},
                {"max_lines", c.max_lines},     {"max_slots", c.max_slots}, {"lora_rank", c.lora_rank},
                {"lora_alpha", c.lora_alpha}};
  json tokens = json::array();
  for (std::size_t i = special::count; i < params.vocab->size(); ++i)
    tokens.push_back({params.vocab->tokens()[i], class_name(params.vocab->classes()[i])});
  h["vocabulary"] = tokens;
  h["base_size"] = params.base.size();
  h["adapter_size"] = params.adapters.size();
  h["freeze_base"] = params.freeze_base;
  h["seed_lineage"] = params.seed_lineage;
  h["metadata"] = json::parse(metadata_json);
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(params.base.data()),
            static_cast<std::streamsize>(params.base.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(params.adapters.data()),
            static_cast<std::streamsize>(params.adapters.size() * sizeof(double)));
  if (!out) fail(ErrorKind::data, "checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) fail(ErrorKind::data, "checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    fail(ErrorKind::data, "checkpoint: unsupported version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::data, "checkpoint: truncated header");
  json h;
  try {
    h = json::parse(header);
  } catch (const std::exception& e) {
    fail(ErrorKind::data, std::string("checkpoint: bad header: ") + e.what());
  }
  auto vocab = std::make_shared<Vocabulary>();
  for (const auto& t : h.at("vocabulary")) vocab->add(t.at(0).get<std::string>(), class_from(t.at(1)));
  Checkpoint ck;
  auto& p = ck.params;
  const auto& m = h.at("model");
  p.config.vocab_size = m.at("vocab_size");
  p.config.d_model = m.at("d_model");
  p.config.n_layers = m.at("n_layers");
  p.config.n_heads = m.at("n_heads");
  p.config.d_ff = m.at("d_ff");
  p.config.context_window = m.at("context_window");
  p.config.max_lines = m.at("max_lines");
  p.config.max_slots = m.at("max_slots");
  p.config.lora_rank = m.at("lora_rank");
  p.config.lora_alpha = m.at("lora_alpha");
  p.config.validate();
  if (vocab->size() != p.config.vocab_size) fail(ErrorKind::data, "checkpoint: vocabulary size mismatch");
  p.vocab = std::move(vocab);
  p.freeze_base = h.at("freeze_base");
  p.seed_lineage = h.at("seed_lineage").get<std::vector<std::uint64_t>>();
  const Layout L(p.config);
  const std::size_t nb = h.at("base_size"), na = h.at("adapter_size");
  if (nb != L.total || (na != 0 && na != L.adapter_total)) fail(ErrorKind::data, "checkpoint: shape mismatch");
  p.base.resize(nb);
  p.adapters.resize(na);
  in.read(reinterpret_cast<char*>(p.base.data()), static_cast<std::streamsize>(nb * sizeof(double)));
  in.read(reinterpret_cast<char*>(p.adapters.data()), static_cast<std::streamsize>(na * sizeof(double)));
  if (!in) fail(ErrorKind::data, "checkpoint: truncated parameters");
  ck.metadata_json = h.at("metadata").dump();
  return ck;
}

}  // namespace sspo::policy
