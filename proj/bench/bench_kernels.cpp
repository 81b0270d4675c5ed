// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP versions. Arg(0) is the
// worker count; 1 selects the serial path.

#include <benchmark/benchmark.h>

#include "sspo/align.hpp"
#include "sspo/evaluate.hpp"
#include "sspo/parallel.hpp"

using namespace sspo;

namespace {

struct Fixture {
  corpus::Task task;
  policy::PolicyParams params;
  policy::PolicyParams reference;
  std::vector<PreferencePair> pairs;

  Fixture() {
    corpus::SyntheticTaskSpec spec;
    spec.documents = 100;
    spec.test_documents = 16;
    task = corpus::generate_task(spec, 1);
    const auto vocab = std::make_shared<const Vocabulary>(task.vocab);
    reference = policy::init_params(policy::default_config(*vocab), vocab, 1);
    params = align::prepare_policy(reference, align::FormatControl::low_rank, 2);
    Rng rng(3);
    for (const auto& doc : task.split.demonstration) {
      if (pairs.size() == 64) break;
      const auto prompt = corpus::encode_prompt(doc);
      std::vector<TokenSeq> refs;
      for (const auto& l : doc.lines) refs.push_back(l.reference);
      const std::size_t i = rng.below(doc.lines.size());
      PreferencePair p;
      p.prefix = sampling::line_prefix(prompt, doc, refs, i);
      p.chosen = doc.lines[i].reference;
      p.rejected = doc.lines[i].reference;
      p.rejected.pop_back();
      pairs.push_back(std::move(p));
    }
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_SspoLossBatch(benchmark::State& state) {
  const auto& f = fixture();
  std::vector<const PreferencePair*> batch;
  for (const auto& p : f.pairs) batch.push_back(&p);
  const auto workers = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto l = align::sspo_loss(f.params, f.reference, batch, align::LossConfig{}, true, workers);
    benchmark::DoNotOptimize(l.value);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}

void BM_GreedyEvaluation(benchmark::State& state) {
  const auto& f = fixture();
  policy::SamplerConfig greedy;
  greedy.greedy = true;
  const auto workers = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto r = eval::evaluate_policy(f.params, f.task.split.test, f.task.durations, greedy, 0, workers);
    benchmark::DoNotOptimize(r.metrics.mean_penalty);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.task.split.test.size()));
}

void BM_AccumulateReduction(benchmark::State& state) {
  const auto& f = fixture();
  const auto workers = static_cast<std::size_t>(state.range(0));
  auto item = [&](std::size_t i, policy::Gradient& g) {
    for (std::size_t j = 0; j < g.adapters.size(); ++j) g.adapters[j] = static_cast<double>((i * 31 + j) % 7);
    return 1.0;
  };
  for (auto _ : state) {
    auto total = policy::Gradient::zeros_like(f.params);
    const double loss = workers <= 1 ? parallel::accumulate_serial(64, total, item)
                                     : parallel::accumulate_omp(64, total, item, workers);
    benchmark::DoNotOptimize(loss);
  }
}

}  // namespace

BENCHMARK(BM_SspoLossBatch)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GreedyEvaluation)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AccumulateReduction)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
