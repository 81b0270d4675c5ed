// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "sspo/corpus.hpp"
#include "sspo/model.hpp"
#include "sspo/optimizer.hpp"

namespace sspo::policy {

/// Divergence during training; carries the parameters of the last finite step.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, PolicyParams last_good, std::size_t epoch)
      : Error(ErrorKind::training, what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const PolicyParams& last_good() const noexcept { return last_good_; }
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  PolicyParams last_good_;
  std::size_t epoch_;
};

struct SftConfig {
  std::size_t epochs = 6;
  std::size_t batch_documents = 8;
  AdamWConfig optimizer{.lr = 3e-3};
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

using EpochCallback = std::function<void(std::size_t epoch, const PolicyParams& params, double loss)>;

struct SftResult {
  PolicyParams params;
  std::vector<double> epoch_losses;  // mean per-token cross-entropy, nats
};

/// Teacher-forced cross-entropy of the reference response (response tokens
/// only). Returns the summed loss; adds d(sum)/dparams to `grad` if non-null.
double response_nll(const PolicyParams& params, const EffectiveWeights& eff, const corpus::Document& doc,
                    Gradient* grad, std::size_t* tokens = nullptr);

SftResult sft_train(const PolicyParams& init, const std::vector<corpus::Document>& demo, const SftConfig& config,
                    const EpochCallback& on_epoch = {});

}  // namespace sspo::policy
