// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

// sspo: command-line driver for data generation, SFT, preference sampling,
// alignment training, evaluation, histograms, ablations and the full pipeline.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sspo/checkpoint.hpp"
#include "sspo/pipeline.hpp"

using namespace sspo;
using pipeline::RunConfig;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> trainer;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "keyed config file (key = value)");
  app->add_option("--seed", f.seed, "experiment seed");
  app->add_option("--trainer", f.trainer, "sspo | dpo_coarse | dpo_fine | ppo");
  app->add_option("--workers", f.workers, "worker threads for sampling and gradients");
  app->add_option("--out", f.out, std::string("output root (default $") + pipeline::kOutputRootEnv + " or ./runs)");
  app->add_option("--set", f.overrides, "override one key: --set loss.beta=1.0");
}

// File values first, then flags; flags win.
RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : pipeline::load_config(f.config_path);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::config, "--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) c.seed = *f.seed;
  if (f.trainer) c.trainer = pipeline::trainer_from(*f.trainer);
  if (f.workers) c.workers = *f.workers;
  if (f.out) c.out_root = *f.out;
  c.validate();
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

policy::PolicyParams load_policy(const std::filesystem::path& path, const corpus::Task& task) {
  auto p = policy::read_checkpoint(path).params;
  if (p.vocab->tokens() != task.vocab.tokens())
    fail(ErrorKind::data, "checkpoint " + path.string() + " was trained on a different vocabulary");
  return p;
}

void print_rows(const std::vector<pipeline::ReportRow>& rows) { std::cout << pipeline::report_csv(rows); }

int cmd_gen_data(const RunConfig& c) {
  const auto task = pipeline::ensure_task(c);
  std::printf("task %s: %zu demonstration, %zu query, %zu test documents\n", c.task_dir().c_str(),
              task.split.demonstration.size(), task.split.query.size(), task.split.test.size());
  return 0;
}

int cmd_sft(const RunConfig& c) {
  const auto task = pipeline::ensure_task(c);
  pipeline::ensure_sft(c, task);
  std::printf("sft %s\n", (c.sft_dir() / "sft.ckpt").c_str());
  return 0;
}

int cmd_sample(const RunConfig& c) {
  const auto task = pipeline::ensure_task(c);
  const auto sft = pipeline::ensure_sft(c, task);
  const sampling::QualityOracle quality(task.key, task.vocab);
  const sampling::Oracles oracles{&task.vocab, &task.durations, &quality};
  auto sc = c.sampling;
  sc.workers = c.workers;
  const auto query = pipeline::query_subset(c, task);
  const auto dir = c.run_dir();
  switch (c.trainer) {
    case pipeline::Trainer::sspo: {
      const auto data = sampling::sspo_sample(sft, query, sc, oracles, c.seed);
      sampling::write_sampled(dir / "sampled.jsonl", data);
      std::printf("%s: %zu of %zu lines retained, alignment bound %.6f\n", (dir / "sampled.jsonl").c_str(),
                  data.retained(), data.visited(), data.retained() ? duration::alignment_bound(data) : 0.0);
      break;
    }
    case pipeline::Trainer::dpo_coarse:
    case pipeline::Trainer::dpo_fine: {
      const bool coarse = c.trainer == pipeline::Trainer::dpo_coarse;
      const auto pairs = coarse ? sampling::coarse_sample(sft, query, sc, oracles, c.seed)
                                : sampling::fine_sample(sft, query, sc, oracles, c.seed);
      const auto path = dir / (coarse ? "pairs-coarse.jsonl" : "pairs-fine.jsonl");
      sampling::write_response_pairs(path, pairs);
      std::printf("%s: %zu pairs, %zu documents skipped\n", path.c_str(), pairs.pairs.size(), pairs.skipped);
      break;
    }
    case pipeline::Trainer::ppo: {
      const auto rollouts = sampling::ppo_rollout(sft, query, sc, oracles, {}, c.seed);
      sampling::write_rollouts(dir / "rollouts.jsonl", rollouts);
      std::printf("%s: %zu trajectories\n", (dir / "rollouts.jsonl").c_str(), rollouts.size());
      break;
    }
  }
  return 0;
}

int cmd_train(const RunConfig& c) {
  const auto task = pipeline::ensure_task(c);
  const auto sft = pipeline::ensure_sft(c, task);
  std::filesystem::create_directories(c.run_dir());
  pipeline::write_text(c.run_dir() / "config.txt", c.to_text());
  pipeline::Manifest manifest(c.run_dir() / "manifest-train.json", c);
  try {
    const auto r = pipeline::train_stage(c, task, sft, manifest);
    manifest.complete();
    for (const auto& e : r.epochs) std::printf("epoch %zu loss %.6f extra %.6f\n", e.epoch, e.loss, e.extra);
    std::printf("policy %s\n", (c.run_dir() / "policy.ckpt").c_str());
  } catch (const Error& e) {
    manifest.fail("train", e.what(), exit_code_for(e.kind()));
    throw;
  }
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint) {
  const auto task = pipeline::ensure_task(c);
  const auto path = checkpoint.empty() ? c.run_dir() / "policy.ckpt" : std::filesystem::path(checkpoint);
  const auto params = load_policy(path, task);
  const auto r = pipeline::evaluate_stage(c, task, params);
  const auto gold = eval::evaluate_references(task.split.test, task.durations, c.consistency_threshold);
  const std::vector<pipeline::ReportRow> rows{{"Gold Reference", "-", gold.metrics},
                                             {"toy-transformer", path.stem().string(), r.metrics}};
  const auto stem = path.stem().string();
  pipeline::write_text(c.run_dir() / ("eval-" + stem + ".csv"), pipeline::report_csv(rows));
  pipeline::write_text(c.run_dir() / ("lines-" + stem + ".csv"), pipeline::lines_csv(r));
  print_rows(rows);
  return 0;
}

int cmd_histogram(const RunConfig& c, const std::string& checkpoint) {
  const auto task = pipeline::ensure_task(c);
  const auto path = checkpoint.empty() ? c.run_dir() / "policy.ckpt" : std::filesystem::path(checkpoint);
  const auto r = pipeline::evaluate_stage(c, task, load_policy(path, task));
  const auto h = duration::histogram(r.differences(), c.histogram_bin_width);
  const auto stem = path.stem().string();
  pipeline::write_text(c.run_dir() / ("histogram-" + stem + ".csv"), pipeline::histogram_csv(h));
  pipeline::write_text(c.run_dir() / ("lines-" + stem + ".csv"), pipeline::lines_csv(r));
  std::cout << pipeline::histogram_csv(h);
  std::printf("# mean %.6f variance %.6f over %zu efficient lines\n", h.mean, h.variance, r.differences().size());
  return 0;
}

int cmd_ablation(const RunConfig& c, const std::string& sweep_name, const std::string& values) {
  const auto sweep = pipeline::sweep_from(sweep_name);
  const auto rows = pipeline::run_ablation(c, sweep, split_list(values));
  std::cout << pipeline::ablation_csv(sweep, rows);
  if (sweep == pipeline::Sweep::data_scale)
    std::printf("# mean P non-increasing with data scale: %s (reported, not enforced)\n",
                pipeline::non_increasing(rows) ? "yes" : "no");
  return 0;
}

int cmd_pipeline(const RunConfig& c) {
  const auto r = pipeline::run_pipeline(c);
  print_rows(r.rows);
  std::printf("# run %s\n", r.run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment-supervised preference optimization on a synthetic dubbing task"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string checkpoint, sweep, values;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic task and its splits");
  auto* sft = app.add_subcommand("sft", "train (or load) the supervised baseline");
  auto* sample = app.add_subcommand("sample", "build preference data for --trainer from the SFT policy");
  auto* train = app.add_subcommand("train", "sample and train with --trainer");
  auto* ev = app.add_subcommand("eval", "score a checkpoint on the test split");
  auto* hist = app.add_subcommand("histogram", "duration-difference histogram of a checkpoint");
  auto* abl = app.add_subcommand("ablation", "sweep beta, data_scale or format_control");
  auto* pipe = app.add_subcommand("pipeline", "SFT, sampling, training and evaluation");
  for (auto* s : {gen, sft, sample, train, ev, hist, abl, pipe}) add_common(s, flags);
  for (auto* s : {ev, hist}) s->add_option("--checkpoint", checkpoint, "policy checkpoint (default: run policy.ckpt)");
  abl->add_option("--sweep", sweep, "beta | data_scale | format_control")->required();
  abl->add_option("--values", values, "comma-separated sweep values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code_for(ErrorKind::config);
  }

  try {
    const auto c = resolve(flags);
    if (*gen) return cmd_gen_data(c);
    if (*sft) return cmd_sft(c);
    if (*sample) return cmd_sample(c);
    if (*train) return cmd_train(c);
    if (*ev) return cmd_eval(c, checkpoint);
    if (*hist) return cmd_histogram(c, checkpoint);
    if (*abl) return cmd_ablation(c, sweep, values);
    if (*pipe) return cmd_pipeline(c);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(ErrorKind::data);
  }
  return 0;
}
