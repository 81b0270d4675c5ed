// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sspo/model.hpp"

namespace sspo::policy {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
};

/// Adam with decoupled weight decay over the trainable part of PolicyParams.
class AdamW {
 public:
  AdamW(const PolicyParams& params, AdamWConfig config);

  /// Applies one update; returns the pre-clip gradient norm.
  double step(PolicyParams& params, const Gradient& grad);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamWConfig c_;
  std::vector<double> m_base_, v_base_, m_ad_, v_ad_;
  std::size_t t_ = 0;
};

}  // namespace sspo::policy
