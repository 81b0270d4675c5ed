// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sspo/model.hpp"
#include "sspo/optimizer.hpp"
#include "sspo/sampling.hpp"
#include "sspo/sft.hpp"

namespace sspo::align {

enum class FormatControl { none, tkld, low_rank };

std::string to_string(FormatControl f);
FormatControl format_control_from(const std::string& s);  // config error on unknown

struct LossConfig {
  double beta = 0.5;
  double lambda_tkld = 1e-4;
  double clip_epsilon = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  std::size_t epochs = 4;
  std::size_t batch_lines = 64;
  FormatControl format_control = FormatControl::low_rank;

  void validate() const;
};

struct LossGrad {
  double value = 0.0;
  policy::Gradient grad;
};

/// log pi_theta - log pi_ref of the chosen segment minus that of the rejected
/// one, both conditioned on the pair's prefix.
double segment_contrast(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                        const PreferencePair& pair);

/// -log sigmoid(beta * contrast) and its gradient.
LossGrad dpo_segment_loss(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                          const PreferencePair& pair, double beta);

/// Mean of dpo_segment_loss over the batch, plus lambda * (summed chosen-
/// segment token KL) / batch size when `with_tkld`.
LossGrad sspo_loss(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                   std::span<const PreferencePair* const> batch, const LossConfig& config, bool with_tkld = false,
                   std::size_t workers = 1);

struct TokenSpan {
  TokenSeq prefix;
  TokenSeq tokens;  // KL is taken at the positions predicting these
};

/// lambda * sum over positions of KL(pi_theta || pi_ref), full vocabulary.
LossGrad tkld_penalty(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                      std::span<const TokenSpan> texts, double lambda);

/// Per-position KL values, for inspection.
std::vector<double> token_kl(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                             const TokenSpan& text);

/// Whole-response DPO loss of a vanilla pair.
LossGrad dpo_response_loss(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                           const ResponsePair& pair, double beta);

// Contrast decompositions over a multi-segment document.

/// log(pi/pi_ref) summed over the segment positions of `targets`, computed in
/// one pass over the whole response.
double response_segment_logratio(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                                 const TokenSeq& prompt, const corpus::Document& doc,
                                 const std::vector<TokenSeq>& targets);
/// Same quantity, one forward pass per segment on its own prefix.
double per_segment_logratio(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                            const TokenSeq& prompt, const corpus::Document& doc, const std::vector<TokenSeq>& targets);

struct ContrastTerms {
  std::vector<double> chosen;    // per segment, conditioned on chosen prefixes
  std::vector<double> rejected;  // per segment, on the prefixes stated by the scheme
  double total() const;
};
/// Vanilla whole-response contrast: rejected segments see rejected prefixes.
ContrastTerms vanilla_contrast(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                               const TokenSeq& prompt, const corpus::Document& doc,
                               const std::vector<TokenSeq>& chosen, const std::vector<TokenSeq>& rejected);
/// Segment-supervised contrast: every segment sees the chosen prefix.
ContrastTerms segment_contrast_terms(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                                     const TokenSeq& prompt, const corpus::Document& doc,
                                     const std::vector<TokenSeq>& chosen, const std::vector<TokenSeq>& rejected);

// PPO.

/// delta_i = r_i + gamma V_{i+1} - V_i with V after the last step = 0;
/// A_i = sum_l (gamma lambda)^l delta_{i+l}. Filled in place.
void gae_advantages(sampling::Trajectory& trajectory, double gamma, double gae_lambda);

/// -sum_i min(rho A, clip(rho, 1-eps, 1+eps) A), averaged over trajectories.
LossGrad ppo_clip_loss(const policy::PolicyParams& policy, std::span<const sampling::Trajectory> trajectories,
                       double clip_epsilon, std::size_t workers = 1);

/// Scalar head over frozen prefix features: tanh MLP with one hidden layer.
struct ValueModel {
  std::size_t inputs = 0;
  std::size_t hidden = 0;
  std::vector<double> w;  // W1 (hidden x inputs), b1, w2 (hidden), b2

  static ValueModel init(std::size_t inputs, std::size_t hidden, std::uint64_t seed);
  double predict(std::span<const double> x) const;
  /// Adds upstream * dV/dw to grad.
  void backward(std::span<const double> x, double upstream, std::vector<double>& grad) const;
};

/// Final hidden state of `features_model` at the end of every step prefix.
std::vector<std::vector<double>> prefix_features(const policy::PolicyParams& features_model,
                                                 const sampling::Trajectory& trajectory);

/// Mean squared error between V(p_i) and the constant target A_i + value_i.
double value_loss(const ValueModel& model, std::span<const std::vector<double>> features,
                  std::span<const sampling::Step> steps, std::vector<double>* grad = nullptr);

// Training loops.

struct AlignConfig {
  LossConfig loss;
  policy::AdamWConfig optimizer{.lr = 1e-3};
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  // PPO
  std::size_t ppo_rounds = 8;
  std::size_t ppo_policy_epochs = 4;
  double ppo_kl_guard = 0.05;  // early stop when mean(old - new log-prob) exceeds this
  std::size_t value_hidden = 32;
  std::size_t value_epochs = 50;
  double value_lr = 1e-2;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double extra = 0.0;  // tkld term (sspo/dpo) or mean reward (ppo)
  std::size_t steps = 0;
};

struct TrainResult {
  policy::PolicyParams params;
  std::vector<EpochRecord> epochs;
};

using AlignCallback = std::function<void(const EpochRecord&, const policy::PolicyParams&)>;

/// Copy of pi_sft prepared for the given format control: adapters on a frozen
/// base for low_rank, full parameters otherwise.
policy::PolicyParams prepare_policy(const policy::PolicyParams& sft, FormatControl control, std::uint64_t seed);

TrainResult train_sspo(const policy::PolicyParams& sft, const SampledDataset& sampled, const AlignConfig& config,
                       const AlignCallback& on_epoch = {});

TrainResult train_dpo_vanilla(const policy::PolicyParams& sft, const ResponsePairSet& pairs, const AlignConfig& config,
                              const AlignCallback& on_epoch = {});

TrainResult train_ppo(const policy::PolicyParams& sft, const std::vector<corpus::Document>& query,
                      const sampling::SamplingConfig& sampling, const sampling::Oracles& oracles,
                      const AlignConfig& config, const AlignCallback& on_epoch = {});

}  // namespace sspo::align
