// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment orchestration: run configuration, artifact layout, the staged
// pipeline and the ablation sweeps driven by the command-line tool.
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sspo/align.hpp"
#include "sspo/corpus.hpp"
#include "sspo/evaluate.hpp"
#include "sspo/sampling.hpp"
#include "sspo/sft.hpp"

namespace sspo::pipeline {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "SSPO_OUT";

enum class Trainer { sspo, dpo_coarse, dpo_fine, ppo };

std::string to_string(Trainer t);
Trainer trainer_from(const std::string& s);  // config error on unknown

struct RunConfig {
  std::string experiment_id = "sspo";
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  Trainer trainer = Trainer::sspo;
  corpus::SyntheticTaskSpec task;
  policy::SftConfig sft{.epochs = 6, .batch_documents = 8, .optimizer = {.lr = 3e-3}};
  sampling::SamplingConfig sampling;
  align::AlignConfig align;
  double data_scale = 1.0;  // fraction of the query split used for preference data
  double consistency_threshold = duration::kDefaultConsistencyThreshold;
  double histogram_bin_width = 0.1;
  std::filesystem::path out_root;  // empty: $SSPO_OUT, then ./runs

  RunConfig() { align.optimizer.lr = 1.35e-3; }

  void validate() const;

  /// Canonical "key = value" text, one key per line, schema version first.
  std::string to_text() const;
  /// Applies one key; config error on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  /// Applies every "key = value" line; '#' starts a comment.
  void apply_text(const std::string& text);

  /// Hash of every setting that affects results (not paths or worker count).
  std::uint64_t hash() const;
  std::uint64_t task_hash() const;
  std::uint64_t sft_hash() const;

  std::filesystem::path root() const;
  std::filesystem::path run_dir() const;   // <root>/<experiment_id>-<hash>
  std::filesystem::path task_dir() const;  // <root>/shared/task-<hash>
  std::filesystem::path sft_dir() const;   // <root>/shared/sft-<hash>
};

RunConfig load_config(const std::filesystem::path& path);
std::vector<std::string> config_keys();

/// Stage-by-stage run record, rewritten after every stage so that a failure
/// leaves a partial manifest naming the stage that failed.
class Manifest {
 public:
  Manifest(std::filesystem::path path, const RunConfig& config);
  ~Manifest();
  Manifest(const Manifest&) = delete;
  Manifest& operator=(const Manifest&) = delete;

  void begin(const std::string& stage);
  void end(const std::string& stage);
  void fail(const std::string& stage, const std::string& what, int exit_code);
  void complete();
  void put(const std::string& key, const nlohmann::json& value);
  void put_epoch(const std::string& stage, std::size_t epoch, const nlohmann::json& record);
  const std::filesystem::path& path() const noexcept { return path_; }
  nlohmann::json snapshot() const;

 private:
  void flush() const;
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::filesystem::path path_;
};

struct ReportRow {
  std::string method;
  std::string train;
  duration::MetricsReport metrics;
  bool penalty_only = false;  // the bound row carries only P
};

std::string report_csv(const std::vector<ReportRow>& rows);
std::string lines_csv(const eval::EvalResult& result);
std::string histogram_csv(const duration::Histogram& h);

struct PipelineResult {
  std::filesystem::path run_dir;
  eval::EvalResult sft;
  eval::EvalResult trained;
  eval::EvalResult gold;
  double alignment_bound = 0.0;
  duration::Histogram sft_histogram;
  duration::Histogram trained_histogram;
  std::vector<align::EpochRecord> epochs;
  SampleCounters counters;
  std::size_t retained = 0;  // preference pairs (segments or responses)
  std::vector<ReportRow> rows;
};

/// Loads the task from its shared directory, generating it on first use.
corpus::Task ensure_task(const RunConfig& config);
/// Loads the SFT checkpoint from its shared directory, training it (with
/// epoch checkpoints) on first use.
policy::PolicyParams ensure_sft(const RunConfig& config, const corpus::Task& task);

/// Query documents used for preference data under `data_scale`.
std::vector<corpus::Document> query_subset(const RunConfig& config, const corpus::Task& task);

struct TrainedPolicy {
  policy::PolicyParams params;
  std::vector<align::EpochRecord> epochs;
  SampleCounters counters;
  std::size_t retained = 0;
  std::optional<double> alignment_bound;  // set when the trainer samples segments
};

/// Sampling plus training for the configured trainer. Writes the preference
/// data, epoch checkpoints and the final policy into the run directory.
TrainedPolicy train_stage(const RunConfig& config, const corpus::Task& task, const policy::PolicyParams& sft,
                          Manifest& manifest);

eval::EvalResult evaluate_stage(const RunConfig& config, const corpus::Task& task, const policy::PolicyParams& params);

/// SFT, sampling, training and held-out evaluation; writes report.csv,
/// lines, histograms and manifest.json into the run directory.
PipelineResult run_pipeline(const RunConfig& config);

enum class Sweep { beta, data_scale, format_control };
Sweep sweep_from(const std::string& s);
std::string to_string(Sweep s);

struct AblationRow {
  std::string value;
  double mean_penalty = 0.0;
  double efficient_rate = 0.0;
  double cr = 0.0;
  double variance = 0.0;
};

/// Runs the pipeline once per value (defaults: beta {0.1, 0.5, 1.0},
/// data_scale {0.25, 0.5, 1.0}, all format controls) and writes
/// ablation-<sweep>.csv into the base run directory.
std::vector<AblationRow> run_ablation(const RunConfig& base, Sweep sweep, std::vector<std::string> values = {});

std::string ablation_csv(Sweep sweep, const std::vector<AblationRow>& rows);

/// Monotone non-increasing check used by the data-scale sweep report.
bool non_increasing(const std::vector<AblationRow>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sspo::pipeline
