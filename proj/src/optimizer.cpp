// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "sspo/optimizer.hpp"

#include <cmath>

namespace sspo::policy {
namespace {

void adam_update(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, const AdamWConfig& c, double scale, double bc1, double bc2) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i] * scale;
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    w[i] -= c.lr * (mh / (std::sqrt(vh) + c.eps) + c.weight_decay * w[i]);
  }
}

}  // namespace

AdamW::AdamW(const PolicyParams& params, AdamWConfig config) : c_(config) {
  if (!(c_.lr > 0.0)) fail(ErrorKind::config, "optimizer: lr must be positive");
  if (!params.freeze_base) {
    m_base_.assign(params.base.size(), 0.0);
    v_base_.assign(params.base.size(), 0.0);
  }
  m_ad_.assign(params.adapters.size(), 0.0);
  v_ad_.assign(params.adapters.size(), 0.0);
}

double AdamW::step(PolicyParams& params, const Gradient& grad) {
  double sq = 0.0;
  if (!params.freeze_base)
    for (double x : grad.base) sq += x * x;
  for (double x : grad.adapters) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) return norm;
  const double scale = (c_.clip_norm > 0.0 && norm > c_.clip_norm) ? c_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
  if (!params.freeze_base) adam_update(params.base, grad.base, m_base_, v_base_, c_, scale, bc1, bc2);
  if (params.has_adapters()) adam_update(params.adapters, grad.adapters, m_ad_, v_ad_, c_, scale, bc1, bc2);
  return norm;
}

}  // namespace sspo::policy
