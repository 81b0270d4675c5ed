// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "sspo/checkpoint.hpp"

namespace sspo::pipeline {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  fail(ErrorKind::config, "config: bad value for " + key + ": '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto r = std::from_chars(value.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, value);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Which hash a key contributes to.
enum class Scope { task, sft, run, none };

struct Entry {
  const char* key;
  Scope scope;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Accessors are built from a projection onto the field.
template <typename T, typename Proj>
Entry field(const char* key, Scope scope, Proj proj) {
  return {key, scope,
          [proj](const RunConfig& c) {
            const T& v = proj(const_cast<RunConfig&>(c));
            if constexpr (std::is_same_v<T, double>)
              return fmt(v);
            else
              return fmt(static_cast<std::uint64_t>(v));
          },
          [proj, key](RunConfig& c, const std::string& s) { proj(c) = parse_number<T>(key, s); }};
}

#define SSPO_FIELD(T, key, scope, expr) field<T>(key, scope, [](RunConfig& c) -> T& { return expr; })

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back({"experiment_id", Scope::run, [](const RunConfig& c) { return c.experiment_id; },
                 [](RunConfig& c, const std::string& s) {
                   if (s.empty() || s.find_first_of("/\\ \t") != std::string::npos) bad_value("experiment_id", s);
                   c.experiment_id = s;
                 }});
    t.push_back(SSPO_FIELD(std::uint64_t, "seed", Scope::task, c.seed));
    t.push_back(SSPO_FIELD(std::size_t, "workers", Scope::none, c.workers));
    t.push_back({"trainer", Scope::run, [](const RunConfig& c) { return to_string(c.trainer); },
                 [](RunConfig& c, const std::string& s) { c.trainer = trainer_from(s); }});
    t.push_back(SSPO_FIELD(double, "data_scale", Scope::run, c.data_scale));
    t.push_back(SSPO_FIELD(double, "consistency_threshold", Scope::run, c.consistency_threshold));
    t.push_back(SSPO_FIELD(double, "histogram_bin_width", Scope::run, c.histogram_bin_width));
    t.push_back({"out", Scope::none, [](const RunConfig& c) { return c.out_root.string(); },
                 [](RunConfig& c, const std::string& s) { c.out_root = s; }});

    t.push_back(SSPO_FIELD(std::size_t, "task.source_vocab_size", Scope::task, c.task.source_vocab_size));
    t.push_back(SSPO_FIELD(std::size_t, "task.synonym_set_size", Scope::task, c.task.synonym_set_size));
    t.push_back(SSPO_FIELD(std::uint64_t, "task.duration_table_seed", Scope::task, c.task.duration_table_seed));
    t.push_back(SSPO_FIELD(std::size_t, "task.line_length_min", Scope::task, c.task.line_length_min));
    t.push_back(SSPO_FIELD(std::size_t, "task.line_length_max", Scope::task, c.task.line_length_max));
    t.push_back(SSPO_FIELD(std::size_t, "task.lines_per_document", Scope::task, c.task.lines_per_document));
    t.push_back(SSPO_FIELD(std::size_t, "task.documents", Scope::task, c.task.documents));
    t.push_back(SSPO_FIELD(std::size_t, "task.test_documents", Scope::task, c.task.test_documents));
    t.push_back(SSPO_FIELD(double, "task.query_fraction", Scope::task, c.task.query_fraction));
    t.push_back(SSPO_FIELD(std::size_t, "task.function_words", Scope::task, c.task.function_words));
    t.push_back(SSPO_FIELD(double, "task.function_word_rate", Scope::task, c.task.function_word_rate));
    t.push_back(SSPO_FIELD(std::size_t, "task.max_terms", Scope::task, c.task.max_terms));
    t.push_back(SSPO_FIELD(double, "task.pause", Scope::task, c.task.pause));
    t.push_back(SSPO_FIELD(double, "task.source_token_min", Scope::task, c.task.source_token_min));
    t.push_back(SSPO_FIELD(double, "task.source_token_max", Scope::task, c.task.source_token_max));
    t.push_back(SSPO_FIELD(double, "task.synonym_ratio_min", Scope::task, c.task.synonym_ratio_min));
    t.push_back(SSPO_FIELD(double, "task.synonym_ratio_max", Scope::task, c.task.synonym_ratio_max));

    t.push_back(SSPO_FIELD(std::size_t, "sft.epochs", Scope::sft, c.sft.epochs));
    t.push_back(SSPO_FIELD(std::size_t, "sft.batch_documents", Scope::sft, c.sft.batch_documents));
    t.push_back(SSPO_FIELD(double, "sft.lr", Scope::sft, c.sft.optimizer.lr));
    t.push_back(SSPO_FIELD(double, "sft.weight_decay", Scope::sft, c.sft.optimizer.weight_decay));
    t.push_back(SSPO_FIELD(double, "sft.clip_norm", Scope::sft, c.sft.optimizer.clip_norm));

    t.push_back(SSPO_FIELD(std::size_t, "sampling.k", Scope::run, c.sampling.k));
    t.push_back(SSPO_FIELD(std::size_t, "sampling.epsilon1", Scope::run, c.sampling.epsilon1));
    t.push_back(SSPO_FIELD(double, "sampling.epsilon2", Scope::run, c.sampling.epsilon2));
    t.push_back(SSPO_FIELD(double, "sampling.discard_fraction", Scope::run, c.sampling.discard_fraction));
    t.push_back(SSPO_FIELD(double, "sampling.temperature", Scope::run, c.sampling.sampler.temperature));
    t.push_back(SSPO_FIELD(std::size_t, "sampling.top_k", Scope::run, c.sampling.sampler.top_k));
    t.push_back(SSPO_FIELD(double, "sampling.top_p", Scope::run, c.sampling.sampler.top_p));
    t.push_back(
        SSPO_FIELD(std::size_t, "sampling.max_segment_tokens", Scope::run, c.sampling.sampler.max_segment_tokens));
    t.push_back(SSPO_FIELD(std::size_t, "sampling.max_response_tokens", Scope::run, c.sampling.max_response_tokens));

    t.push_back(SSPO_FIELD(double, "loss.beta", Scope::run, c.align.loss.beta));
    t.push_back(SSPO_FIELD(double, "loss.lambda_tkld", Scope::run, c.align.loss.lambda_tkld));
    t.push_back(SSPO_FIELD(double, "loss.clip_epsilon", Scope::run, c.align.loss.clip_epsilon));
    t.push_back(SSPO_FIELD(double, "loss.gamma", Scope::run, c.align.loss.gamma));
    t.push_back(SSPO_FIELD(double, "loss.gae_lambda", Scope::run, c.align.loss.gae_lambda));
    t.push_back(SSPO_FIELD(std::size_t, "loss.epochs", Scope::run, c.align.loss.epochs));
    t.push_back(SSPO_FIELD(std::size_t, "loss.batch_lines", Scope::run, c.align.loss.batch_lines));
    t.push_back({"loss.format_control", Scope::run,
                 [](const RunConfig& c) { return align::to_string(c.align.loss.format_control); },
                 [](RunConfig& c, const std::string& s) { c.align.loss.format_control = align::format_control_from(s); }});

    t.push_back(SSPO_FIELD(double, "align.lr", Scope::run, c.align.optimizer.lr));
    t.push_back(SSPO_FIELD(double, "align.weight_decay", Scope::run, c.align.optimizer.weight_decay));
    t.push_back(SSPO_FIELD(double, "align.clip_norm", Scope::run, c.align.optimizer.clip_norm));
    t.push_back(SSPO_FIELD(std::size_t, "align.ppo_rounds", Scope::run, c.align.ppo_rounds));
    t.push_back(SSPO_FIELD(std::size_t, "align.ppo_policy_epochs", Scope::run, c.align.ppo_policy_epochs));
    t.push_back(SSPO_FIELD(double, "align.ppo_kl_guard", Scope::run, c.align.ppo_kl_guard));
    t.push_back(SSPO_FIELD(std::size_t, "align.value_hidden", Scope::run, c.align.value_hidden));
    t.push_back(SSPO_FIELD(std::size_t, "align.value_epochs", Scope::run, c.align.value_epochs));
    t.push_back(SSPO_FIELD(double, "align.value_lr", Scope::run, c.align.value_lr));
    return t;
  }();
  return table;
}

#undef SSPO_FIELD

std::uint64_t hash_scopes(const RunConfig& c, std::initializer_list<Scope> scopes) {
  std::string text = "schema_version=" + std::to_string(kConfigSchemaVersion) + "\n";
  for (const auto& e : entries())
    for (Scope s : scopes)
      if (e.scope == s) text += std::string(e.key) + "=" + e.get(c) + "\n";
  return fnv1a(text.data(), text.size());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json epoch_json(const align::EpochRecord& r) {
  return {{"epoch", r.epoch}, {"loss", r.loss}, {"extra", r.extra}, {"steps", r.steps}};
}

json metrics_json(const duration::MetricsReport& m) {
  return {{"st_rate", m.st_rate},
          {"st_dur", m.st_dur},
          {"ts_rate", m.ts_rate},
          {"ts_dur", m.ts_dur},
          {"cr", m.cr},
          {"mean_penalty", m.mean_penalty},
          {"mean_penalty_efficient", m.mean_penalty_efficient},
          {"efficient_rate", m.efficient_rate},
          {"lines", m.lines}};
}

std::string trainer_label(const RunConfig& c) {
  switch (c.trainer) {
    case Trainer::sspo: return "SSPO";
    case Trainer::dpo_coarse: return "DPO (coarse)";
    case Trainer::dpo_fine: return "DPO (fine)";
    case Trainer::ppo: return "PPO";
  }
  return "?";
}

sampling::Oracles oracles_for(const corpus::Task& task, const sampling::QualityOracle& q) {
  return {&task.vocab, &task.durations, &q};
}

void write_atomically(const std::filesystem::path& path, const std::function<void(const std::filesystem::path&)>& w) {
  auto tmp = path;
  tmp += ".tmp";
  w(tmp);
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string to_string(Trainer t) {
  switch (t) {
    case Trainer::sspo: return "sspo";
    case Trainer::dpo_coarse: return "dpo_coarse";
    case Trainer::dpo_fine: return "dpo_fine";
    case Trainer::ppo: return "ppo";
  }
  return "?";
}

Trainer trainer_from(const std::string& s) {
  for (auto t : {Trainer::sspo, Trainer::dpo_coarse, Trainer::dpo_fine, Trainer::ppo})
    if (to_string(t) == s) return t;
  fail(ErrorKind::config, "unknown trainer '" + s + "' (sspo, dpo_coarse, dpo_fine, ppo)");
}

void RunConfig::validate() const {
  task.validate();
  sampling.validate();
  align.loss.validate();
  if (sft.batch_documents == 0) fail(ErrorKind::config, "config: sft.batch_documents must be positive");
  if (!(sft.optimizer.lr > 0.0) || !(align.optimizer.lr > 0.0)) fail(ErrorKind::config, "config: lr must be positive");
  if (!(data_scale > 0.0 && data_scale <= 1.0)) fail(ErrorKind::config, "config: data_scale must be in (0, 1]");
  if (!(consistency_threshold >= 0.0)) fail(ErrorKind::config, "config: consistency_threshold must be >= 0");
  if (!(histogram_bin_width > 0.0)) fail(ErrorKind::config, "config: histogram_bin_width must be positive");
  if (workers == 0) fail(ErrorKind::config, "config: workers must be positive");
}

std::string RunConfig::to_text() const {
  std::string out = "schema_version = " + std::to_string(kConfigSchemaVersion) + "\n";
  for (const auto& e : entries()) {
    if (std::string(e.key) == "out" && out_root.empty()) continue;
    out += std::string(e.key) + " = " + e.get(*this) + "\n";
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "schema_version") {
    if (parse_number<int>(key, value) != kConfigSchemaVersion)
      fail(ErrorKind::config, "config: unsupported schema_version " + value);
    return;
  }
  for (const auto& e : entries())
    if (key == e.key) return e.set(*this, value);
  fail(ErrorKind::config, "config: unknown key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool versioned = false;
  while (std::getline(in, line)) {
    ++number;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "config line " + std::to_string(number) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    set(key, trim(line.substr(eq + 1)));
    versioned |= key == "schema_version";
  }
  if (!versioned) fail(ErrorKind::config, "config: missing schema_version");
}

std::uint64_t RunConfig::hash() const { return hash_scopes(*this, {Scope::task, Scope::sft, Scope::run}); }
std::uint64_t RunConfig::task_hash() const { return hash_scopes(*this, {Scope::task}); }
std::uint64_t RunConfig::sft_hash() const { return hash_scopes(*this, {Scope::task, Scope::sft}); }

std::filesystem::path RunConfig::root() const {
  if (!out_root.empty()) return out_root;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

std::filesystem::path RunConfig::run_dir() const { return root() / (experiment_id + "-" + hex64(hash())); }
std::filesystem::path RunConfig::task_dir() const { return root() / "shared" / ("task-" + hex64(task_hash())); }
std::filesystem::path RunConfig::sft_dir() const { return root() / "shared" / ("sft-" + hex64(sft_hash())); }

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  c.apply_text(ss.str());
  return c;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> k{"schema_version"};
  for (const auto& e : entries()) k.emplace_back(e.key);
  return k;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::data, "short write to " + path.string());
}

// Manifest.

struct Manifest::Impl {
  json doc;
  std::map<std::string, std::chrono::steady_clock::time_point> started;
};

Manifest::Manifest(std::filesystem::path path, const RunConfig& config)
    : impl_(std::make_unique<Impl>()), path_(std::move(path)) {
  impl_->doc = {{"schema_version", kConfigSchemaVersion},
                {"experiment_id", config.experiment_id},
                {"config_hash", hex64(config.hash())},
                {"seed", config.seed},
                {"trainer", to_string(config.trainer)},
                {"workers", config.workers},
                {"config", config.to_text()},
                {"status", "running"},
                {"stages", json::array()},
                {"epochs", json::object()}};
  flush();
}

Manifest::~Manifest() = default;

void Manifest::begin(const std::string& stage) {
  impl_->started[stage] = std::chrono::steady_clock::now();
  impl_->doc["stages"].push_back({{"name", stage}, {"status", "running"}});
  impl_->doc["current_stage"] = stage;
  flush();
}

void Manifest::end(const std::string& stage) {
  for (auto& s : impl_->doc["stages"])
    if (s["name"] == stage && s["status"] == "running") {
      s["status"] = "done";
      s["seconds"] = seconds_since(impl_->started[stage]);
    }
  impl_->doc.erase("current_stage");
  flush();
}

void Manifest::fail(const std::string& stage, const std::string& what, int exit_code) {
  for (auto& s : impl_->doc["stages"])
    if (s["name"] == stage && s["status"] == "running") s["status"] = "failed";
  impl_->doc["status"] = "failed";
  impl_->doc["failed_stage"] = stage;
  impl_->doc["error"] = what;
  impl_->doc["exit_code"] = exit_code;
  impl_->doc.erase("current_stage");
  flush();
}

void Manifest::complete() {
  impl_->doc["status"] = "complete";
  flush();
}

void Manifest::put(const std::string& key, const json& value) {
  impl_->doc[key] = value;
  flush();
}

void Manifest::put_epoch(const std::string& stage, std::size_t epoch, const json& record) {
  auto& list = impl_->doc["epochs"][stage];
  if (!list.is_array()) list = json::array();
  json r = record;
  r["epoch"] = epoch;
  list.push_back(std::move(r));
  flush();
}

json Manifest::snapshot() const { return impl_->doc; }

void Manifest::flush() const { write_text(path_, impl_->doc.dump(2) + "\n"); }

// Reports.

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = duration::csv_header() + "\n";
  for (const auto& r : rows) {
    if (r.penalty_only) {
      char buf[64];
      std::snprintf(buf, sizeof buf, ",,,,,,%.6f,,,", r.metrics.mean_penalty);
      out += r.method + "," + r.train + buf + "\n";
    } else {
      out += duration::csv_row(r.method, r.train, r.metrics) + "\n";
    }
  }
  return out;
}

std::string lines_csv(const eval::EvalResult& result) {
  std::string out = "prompt_id,line,dur_s,dur_t,diff,efficient,penalty\n";
  char buf[160];
  for (const auto& l : result.lines) {
    std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,%.6f,%d,%.6f\n", l.line_index, l.dur_s, l.dur_t, l.dur_t - l.dur_s,
                  l.efficient ? 1 : 0, duration::penalty(l.dur_s, l.dur_t));
    out += l.prompt_id + buf;
  }
  return out;
}

std::string histogram_csv(const duration::Histogram& h) {
  std::string out = "bin,lower,upper,count\n";
  char buf[128];
  for (std::size_t j = 0; j < h.counts.size(); ++j) {
    const int b = h.min_bin + static_cast<int>(j);
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%zu\n", b, (b - 0.5) * h.bin_width, (b + 0.5) * h.bin_width,
                  h.counts[j]);
    out += buf;
  }
  return out;
}

// Stages.

corpus::Task ensure_task(const RunConfig& config) {
  config.task.validate();
  const auto dir = config.task_dir();
  if (std::filesystem::exists(dir / "task.json")) return corpus::read_task(dir);
  const auto task = corpus::generate_task(config.task, config.seed);
  auto tmp = dir;
  tmp += ".tmp";
  std::filesystem::remove_all(tmp);
  corpus::write_task(tmp, task);
  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
  return corpus::read_task(dir);
}

policy::PolicyParams ensure_sft(const RunConfig& config, const corpus::Task& task) {
  const auto dir = config.sft_dir();
  const auto path = dir / "sft.ckpt";
  const auto vocab = std::make_shared<const Vocabulary>(task.vocab);
  if (std::filesystem::exists(path)) {
    auto p = policy::read_checkpoint(path).params;
    if (p.vocab->tokens() != task.vocab.tokens()) fail(ErrorKind::data, "sft checkpoint vocabulary mismatch");
    p.vocab = vocab;
    return p;
  }
  std::filesystem::create_directories(dir);
  const auto init = policy::init_params(policy::default_config(*vocab), vocab, config.seed);
  auto sc = config.sft;
  sc.seed = config.seed;
  sc.workers = config.workers;
  json log = {{"config", config.to_text()}, {"sft_hash", hex64(config.sft_hash())}, {"epochs", json::array()}};
  const auto result = policy::sft_train(init, task.split.demonstration, sc,
                                        [&](std::size_t epoch, const policy::PolicyParams& p, double loss) {
                                          policy::write_checkpoint(dir / ("epoch-" + std::to_string(epoch) + ".ckpt"),
                                                                   p, json{{"epoch", epoch}, {"loss", loss}}.dump());
                                          log["epochs"].push_back({{"epoch", epoch}, {"loss", loss}});
                                          write_text(dir / "sft.json", log.dump(2) + "\n");
                                        });
  write_text(dir / "sft.json", log.dump(2) + "\n");
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    policy::write_checkpoint(tmp, result.params, json{{"sft_hash", hex64(config.sft_hash())}}.dump());
  });
  return result.params;
}

std::vector<corpus::Document> query_subset(const RunConfig& config, const corpus::Task& task) {
  const auto& q = task.split.query;
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.data_scale * static_cast<double>(q.size()))));
  return {q.begin(), q.begin() + static_cast<std::ptrdiff_t>(std::min(n, q.size()))};
}

TrainedPolicy train_stage(const RunConfig& config, const corpus::Task& task, const policy::PolicyParams& sft,
                          Manifest& manifest) {
  const auto dir = config.run_dir();
  const sampling::QualityOracle quality(task.key, task.vocab);
  const auto oracles = oracles_for(task, quality);
  auto sc = config.sampling;
  sc.workers = config.workers;
  auto ac = config.align;
  ac.seed = config.seed;
  ac.workers = config.workers;
  const auto query = query_subset(config, task);

  const std::string stage = to_string(config.trainer);
  auto on_epoch = [&](const align::EpochRecord& r, const policy::PolicyParams& p) {
    policy::write_checkpoint(dir / "checkpoints" / (stage + "-epoch-" + std::to_string(r.epoch) + ".ckpt"), p,
                             epoch_json(r).dump());
    manifest.put_epoch(stage, r.epoch, epoch_json(r));
  };

  TrainedPolicy out;
  align::TrainResult trained;
  manifest.begin("sample");
  switch (config.trainer) {
    case Trainer::sspo: {
      const auto data = sampling::sspo_sample(sft, query, sc, oracles, config.seed);
      sampling::write_sampled(dir / "sampled.jsonl", data);
      out.counters = data.counters;
      out.retained = data.retained();
      if (out.retained == 0) fail(ErrorKind::empty_input, "sampling retained no segment pairs");
      out.alignment_bound = duration::alignment_bound(data);
      manifest.put("sampling", {{"retained", data.retained()},
                                {"visited", data.visited()},
                                {"segment_samples", data.counters.segment_samples},
                                {"alignment_bound", *out.alignment_bound}});
      manifest.end("sample");
      manifest.begin("train");
      trained = align::train_sspo(sft, data, ac, on_epoch);
      break;
    }
    case Trainer::dpo_coarse:
    case Trainer::dpo_fine: {
      const bool coarse = config.trainer == Trainer::dpo_coarse;
      const auto pairs = coarse ? sampling::coarse_sample(sft, query, sc, oracles, config.seed)
                                : sampling::fine_sample(sft, query, sc, oracles, config.seed);
      sampling::write_response_pairs(dir / (coarse ? "pairs-coarse.jsonl" : "pairs-fine.jsonl"), pairs);
      out.counters = pairs.counters;
      out.retained = pairs.pairs.size();
      manifest.put("sampling", {{"pairs", pairs.pairs.size()},
                                {"skipped", pairs.skipped},
                                {"unparseable", pairs.unparseable},
                                {"segment_samples", pairs.counters.segment_samples},
                                {"response_samples", pairs.counters.response_samples}});
      manifest.end("sample");
      manifest.begin("train");
      trained = align::train_dpo_vanilla(sft, pairs, ac, on_epoch);
      break;
    }
    case Trainer::ppo:
      manifest.end("sample");  // rollouts are drawn inside training
      manifest.begin("train");
      trained = align::train_ppo(sft, query, sc, oracles, ac, on_epoch);
      break;
  }
  policy::write_checkpoint(dir / "policy.ckpt", trained.params,
                           json{{"config_hash", hex64(config.hash())}, {"trainer", stage}}.dump());
  manifest.end("train");
  out.params = std::move(trained.params);
  out.epochs = std::move(trained.epochs);
  return out;
}

eval::EvalResult evaluate_stage(const RunConfig& config, const corpus::Task& task, const policy::PolicyParams& params) {
  policy::SamplerConfig greedy;
  greedy.greedy = true;
  return eval::evaluate_policy(params, task.split.test, task.durations, greedy, config.seed, config.workers,
                               config.consistency_threshold, config.sampling.max_response_tokens);
}

PipelineResult run_pipeline(const RunConfig& config) {
  config.validate();
  const auto dir = config.run_dir();
  std::filesystem::create_directories(dir);
  write_text(dir / "config.txt", config.to_text());
  Manifest manifest(dir / "manifest.json", config);
  std::string stage = "task";
  try {
    PipelineResult r;
    r.run_dir = dir;
    manifest.begin(stage);
    const auto task = ensure_task(config);
    manifest.put("task_dir", config.task_dir().string());
    manifest.end(stage);

    stage = "sft";
    manifest.begin(stage);
    const auto sft = ensure_sft(config, task);
    manifest.put("sft_dir", config.sft_dir().string());
    manifest.end(stage);

    stage = "sample";
    auto trained = train_stage(config, task, sft, manifest);
    r.epochs = trained.epochs;
    r.counters = trained.counters;
    r.retained = trained.retained;

    stage = "bound";
    manifest.begin(stage);
    if (trained.alignment_bound) {
      r.alignment_bound = *trained.alignment_bound;
    } else {
      // Other trainers never sample segments; the bound comes from the same
      // segment sampling the SSPO trainer would use.
      const sampling::QualityOracle quality(task.key, task.vocab);
      auto sc = config.sampling;
      sc.workers = config.workers;
      const auto data = sampling::sspo_sample(sft, query_subset(config, task), sc, oracles_for(task, quality),
                                              config.seed);
      r.alignment_bound = duration::alignment_bound(data);
    }
    manifest.put("alignment_bound", r.alignment_bound);
    manifest.end(stage);

    stage = "eval";
    manifest.begin(stage);
    r.gold = eval::evaluate_references(task.split.test, task.durations, config.consistency_threshold);
    r.sft = evaluate_stage(config, task, sft);
    r.trained = evaluate_stage(config, task, trained.params);
    r.sft_histogram = duration::histogram(r.sft.differences(), config.histogram_bin_width);
    r.trained_histogram = duration::histogram(r.trained.differences(), config.histogram_bin_width);
    r.rows = {{"Gold Reference", "-", r.gold.metrics},
              {"Alignment Bound", "-", duration::MetricsReport{.mean_penalty = r.alignment_bound}, true},
              {"toy-transformer", "SFT", r.sft.metrics},
              {"toy-transformer", trainer_label(config), r.trained.metrics}};
    write_text(dir / "report.csv", report_csv(r.rows));
    write_text(dir / "lines-sft.csv", lines_csv(r.sft));
    write_text(dir / "lines-trained.csv", lines_csv(r.trained));
    write_text(dir / "histogram-sft.csv", histogram_csv(r.sft_histogram));
    write_text(dir / "histogram-trained.csv", histogram_csv(r.trained_histogram));
    manifest.put("metrics", {{"gold", metrics_json(r.gold.metrics)},
                             {"sft", metrics_json(r.sft.metrics)},
                             {"trained", metrics_json(r.trained.metrics)},
                             {"format_control", align::to_string(config.align.loss.format_control)},
                             {"sft_variance", r.sft_histogram.variance},
                             {"trained_variance", r.trained_histogram.variance}});
    manifest.end(stage);
    manifest.complete();
    return r;
  } catch (const Error& e) {
    manifest.fail(stage, e.what(), exit_code_for(e.kind()));
    throw;
  } catch (const std::exception& e) {
    manifest.fail(stage, e.what(), 1);
    throw;
  }
}

// Ablations.

Sweep sweep_from(const std::string& s) {
  for (auto v : {Sweep::beta, Sweep::data_scale, Sweep::format_control})
    if (to_string(v) == s) return v;
  fail(ErrorKind::config, "unknown sweep '" + s + "' (beta, data_scale, format_control)");
}

std::string to_string(Sweep s) {
  switch (s) {
    case Sweep::beta: return "beta";
    case Sweep::data_scale: return "data_scale";
    case Sweep::format_control: return "format_control";
  }
  return "?";
}

std::vector<AblationRow> run_ablation(const RunConfig& base, Sweep sweep, std::vector<std::string> values) {
  if (values.empty()) {
    switch (sweep) {
      case Sweep::beta: values = {"0.1", "0.5", "1"}; break;
      case Sweep::data_scale: values = {"0.25", "0.5", "1"}; break;
      case Sweep::format_control: values = {"none", "tkld", "low_rank"}; break;
    }
  }
  const std::string key = sweep == Sweep::beta         ? "loss.beta"
                          : sweep == Sweep::data_scale ? "data_scale"
                                                       : "loss.format_control";
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    RunConfig c = base;
    c.set(key, v);
    const auto r = run_pipeline(c);
    rows.push_back({v, r.trained.metrics.mean_penalty, r.trained.metrics.efficient_rate, r.trained.metrics.cr,
                    r.trained_histogram.variance});
  }
  write_text(base.run_dir() / ("ablation-" + to_string(sweep) + ".csv"), ablation_csv(sweep, rows));
  return rows;
}

std::string ablation_csv(Sweep sweep, const std::vector<AblationRow>& rows) {
  std::string out = to_string(sweep) + ",P,Efficient Rate,CR,Variance\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f\n", r.mean_penalty, r.efficient_rate, r.cr, r.variance);
    out += r.value + buf;
  }
  return out;
}

bool non_increasing(const std::vector<AblationRow>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].mean_penalty > rows[i - 1].mean_penalty) return false;
  return true;
}

}  // namespace sspo::pipeline
