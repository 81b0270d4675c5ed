// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "sspo/common.hpp"
#include "sspo/vocab.hpp"

namespace sspo::policy {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t context_window = 1024;
  std::size_t max_lines = 16;
  std::size_t max_slots = 12;
  std::size_t lora_rank = 16;
  double lora_alpha = 32.0;

  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }
  void validate() const;
};

/// Structural role of a token, derived from the token stream itself. Together
/// with the line index and the slot inside the line it forms the model's
/// positional encoding.
enum class Role : int {
  head,
  term_source,
  term_target,
  term_sep,
  prompt_source,
  prompt_sep,
  answer,
  response_source,
  open,
  target,
  function,
  close,
  response_sep,
  eos,
  other,
  count
};

struct Position {
  int role = 0;
  int line = 0;
  int slot = 0;
};

/// Incremental annotator: Position of each token given everything before it.
/// Slots count source words echoed so far, or content words emitted so far
/// inside a target, so that both index the source word to be handled next.
class StructureTracker {
 public:
  StructureTracker(const std::vector<TokenClass>* classes, std::size_t max_lines, std::size_t max_slots)
      : classes_(classes), max_lines_(static_cast<int>(max_lines)), max_slots_(static_cast<int>(max_slots)) {}

  Position push(TokenId token);

 private:
  enum class State { head, terms, lines, response_source, response_target, done };
  Position make(Role r, int line, int slot) const;

  const std::vector<TokenClass>* classes_;
  int max_lines_;
  int max_slots_;
  State state_ = State::head;
  int line_ = 0;
  int slot_ = 0;
};

/// Offsets of every tensor inside the flat parameter vectors.
struct Layout {
  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct AdapterOffsets {
    std::size_t a, b;  // A: d x r, B: r x d
  };
  std::size_t tok, role, line, slot;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g, lnf_b, wout, bout, total;
  std::vector<std::array<AdapterOffsets, 3>> adapters;  // q, k, v per layer
  std::size_t adapter_total;

  explicit Layout(const ModelConfig& c);
};

/// Trainable state of the policy. Three instances play the policy, the
/// reference and the SFT model.
struct PolicyParams {
  ModelConfig config;
  std::shared_ptr<const Vocabulary> vocab;
  std::vector<double> base;
  std::vector<double> adapters;  // empty without adapters
  bool freeze_base = false;      // adapter-only training
  std::vector<std::uint64_t> seed_lineage;

  bool has_adapters() const noexcept { return !adapters.empty(); }
  std::size_t parameter_count() const noexcept { return base.size() + adapters.size(); }
  std::size_t trainable_count() const noexcept {
    return (freeze_base ? 0 : base.size()) + adapters.size();
  }
  bool operator==(const PolicyParams& o) const {
    return base == o.base && adapters == o.adapters && freeze_base == o.freeze_base;
  }
};

struct Gradient {
  std::vector<double> base;
  std::vector<double> adapters;

  static Gradient zeros_like(const PolicyParams& p) {
    return {std::vector<double>(p.base.size(), 0.0), std::vector<double>(p.adapters.size(), 0.0)};
  }
  Gradient& operator+=(const Gradient& o);
  Gradient& operator*=(double s);
  void set_zero();
  double dot(const Gradient& o) const;
};

enum class InitScheme { standard, uniform_output };

ModelConfig default_config(const Vocabulary& vocab);
PolicyParams init_params(const ModelConfig& config, std::shared_ptr<const Vocabulary> vocab,
                         std::uint64_t seed, InitScheme scheme = InitScheme::standard);

/// Low-rank factors on the query/key/value projections of every layer.
/// B starts at zero, so the adapted model initially equals the base model.
void attach_adapters(PolicyParams& params, std::uint64_t seed, bool freeze_base = true);

/// base += (alpha/r) A B for every adapted matrix; adapters are removed.
/// Without adapters, returns the input unchanged.
PolicyParams merge_adapter(const PolicyParams& params);

/// Base weights with any adapters folded in; what forward passes run on.
struct EffectiveWeights {
  ModelConfig config;
  Layout layout;
  std::vector<double> w;
  const std::vector<TokenClass>* classes = nullptr;

  explicit EffectiveWeights(const PolicyParams& params);
};

std::vector<Position> annotate(const EffectiveWeights& w, const TokenSeq& ids);

/// Full-sequence forward pass with cached activations for backprop. Logits are
/// produced only at the requested output positions.
class ForwardPass {
 public:
  ForwardPass(const EffectiveWeights& weights, const TokenSeq& ids, std::vector<std::size_t> outputs);

  std::size_t rows() const noexcept { return outputs_.size(); }
  std::size_t output_position(std::size_t row) const { return outputs_[row]; }
  std::span<const double> logits(std::size_t row) const;
  std::span<const double> hidden(std::size_t row) const;  // final-norm hidden state

  enum class Mode { full, attention_only };
  /// Accumulates dLoss/dweights into `grad` (same layout as the weights).
  /// `dhidden` may be empty. attention_only skips every weight gradient except
  /// the q/k/v projections.
  void backward(std::span<const double> dlogits, std::span<const double> dhidden, std::vector<double>& grad,
                Mode mode = Mode::full) const;

 private:
  struct LayerCache {
    std::vector<double> x, xhat1, rstd1, a, q, k, v, p, o, x1, xhat2, rstd2, c, z, g;
  };
  const EffectiveWeights& w_;
  TokenSeq ids_;
  std::vector<Position> pos_;
  std::vector<std::size_t> outputs_;
  std::vector<LayerCache> layers_;
  std::vector<double> xfinal_, fxhat_, frstd_, hf_, logits_;
};

/// Maps a gradient over effective weights onto the trainable parameters.
void project_gradient(const PolicyParams& params, const EffectiveWeights& eff,
                      const std::vector<double>& grad_eff, Gradient& out);

/// Row-wise log-softmax.
void log_softmax(std::span<const double> logits, std::span<double> out);

/// log pi(segment | prefix) as a sum of per-token log-softmax terms.
double segment_logprob(const PolicyParams& params, const TokenSeq& prefix, const TokenSeq& segment);

struct LogProbGrad {
  double value = 0.0;
  Gradient grad;
};
LogProbGrad segment_logprob_grad(const PolicyParams& params, const TokenSeq& prefix, const TokenSeq& segment);

// Autoregressive decoding with key/value caches.
struct DecodeState {
  std::vector<std::vector<double>> keys, values;  // per layer, length x d
  StructureTracker tracker;
  std::size_t length = 0;
  std::vector<double> last_logits;
  TokenSeq tokens;
};

class Decoder {
 public:
  explicit Decoder(const PolicyParams& params);
  explicit Decoder(EffectiveWeights weights);

  DecodeState start(const TokenSeq& prefix) const;
  void push(DecodeState& state, TokenId token) const;
  const EffectiveWeights& weights() const noexcept { return w_; }

 private:
  EffectiveWeights w_;
};

}  // namespace sspo::policy
