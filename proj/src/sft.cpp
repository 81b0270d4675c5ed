// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/sft.hpp"

#include <cmath>
#include <numeric>

#include "sspo/parallel.hpp"
#include "sspo/rng.hpp"

namespace sspo::policy {

double response_nll(const PolicyParams& params, const EffectiveWeights& eff, const corpus::Document& doc,
                    Gradient* grad, std::size_t* tokens) {
  TokenSeq ids = corpus::encode_prompt(doc, params.config.context_window);
  const std::size_t prompt_len = ids.size();
  const TokenSeq resp = corpus::encode_reference_response(doc);
  ids.insert(ids.end(), resp.begin(), resp.end());
  if (ids.size() > params.config.context_window)
    fail(ErrorKind::capacity, "document " + doc.prompt_id + " exceeds the context window");
  std::vector<std::size_t> outs(resp.size());
  std::iota(outs.begin(), outs.end(), prompt_len - 1);
  const ForwardPass fp(eff, ids, outs);
  const std::size_t V = params.config.vocab_size;
  std::vector<double> ls(V);
  std::vector<double> dlogits(grad ? resp.size() * V : 0);
  double loss = 0.0;
  for (std::size_t j = 0; j < resp.size(); ++j) {
    log_softmax(fp.logits(j), ls);
    const auto y = static_cast<std::size_t>(resp[j]);
    loss -= ls[y];
    if (grad) {
      for (std::size_t v = 0; v < V; ++v) dlogits[j * V + v] = std::exp(ls[v]);
      dlogits[j * V + y] -= 1.0;
    }
  }
  if (tokens) *tokens = resp.size();
  if (grad) {
    std::vector<double> geff(eff.layout.total, 0.0);
    fp.backward(dlogits, {}, geff, params.freeze_base ? ForwardPass::Mode::attention_only : ForwardPass::Mode::full);
    project_gradient(params, eff, geff, *grad);
  }
  return loss;
}

SftResult sft_train(const PolicyParams& init, const std::vector<corpus::Document>& demo, const SftConfig& config,
                    const EpochCallback& on_epoch) {
  SftResult out{init, {}};
  if (config.epochs == 0) return out;
  if (demo.empty()) fail(ErrorKind::empty_input, "sft: empty demonstration set");
  if (config.batch_documents == 0) fail(ErrorKind::config, "sft: batch_documents must be >= 1");
  PolicyParams& p = out.params;
  AdamW opt(p, config.optimizer);
  Rng rng(derive_seed(config.seed, 0x5f7));
  std::vector<std::size_t> order(demo.size());
  std::iota(order.begin(), order.end(), 0);
  Gradient grad = Gradient::zeros_like(p);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t j = order.size(); j-- > 1;) std::swap(order[j], order[rng.below(j + 1)]);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_documents) {
      const std::size_t m = std::min(config.batch_documents, order.size() - start);
      const EffectiveWeights eff(p);
      std::vector<std::size_t> counts(m);
      grad.set_zero();
      const double loss = parallel::accumulate(
          m, grad,
          [&](std::size_t i, Gradient& g) { return response_nll(p, eff, demo[order[start + i]], &g, &counts[i]); },
          config.workers);
      const std::size_t tokens = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
      if (!std::isfinite(loss))
        throw TrainingDiverged("sft: non-finite loss in epoch " + std::to_string(epoch), p, epoch);
      grad *= 1.0 / static_cast<double>(tokens);
      const double norm = opt.step(p, grad);  // leaves p untouched on non-finite norm
      if (!std::isfinite(norm))
        throw TrainingDiverged("sft: non-finite gradient in epoch " + std::to_string(epoch), p, epoch);
      epoch_loss += loss;
      epoch_tokens += tokens;
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_tokens));
    if (on_epoch) on_epoch(epoch, p, out.epoch_losses.back());
  }
  return out;
}

}  // namespace sspo::policy
