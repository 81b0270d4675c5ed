// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

// Data-parallel kernels over independent items (batch lines, documents).
// Each kernel has a serial reference and an OpenMP version; both reduce
// per-item results in item order, so their outputs are bitwise identical
// for any worker count.
#pragma once

#include <algorithm>
#include <exception>
#include <vector>

#include <omp.h>

#include "sspo/model.hpp"

namespace sspo::parallel {

/// Per-item work: writes the item's gradient into `g` (pre-zeroed) and
/// returns its loss contribution.
template <typename Fn>
double accumulate_serial(std::size_t n, policy::Gradient& total, Fn&& fn) {
  double loss = 0.0;
  policy::Gradient g = total;
  for (std::size_t i = 0; i < n; ++i) {
    g.set_zero();
    loss += fn(i, g);
    total += g;
  }
  return loss;
}

template <typename Fn>
double accumulate_omp(std::size_t n, policy::Gradient& total, Fn&& fn, std::size_t workers) {
  if (workers <= 1) return accumulate_serial(n, total, fn);
  // Items run in waves so only a bounded number of gradients are live.
  const std::size_t wave = 4 * workers;
  std::vector<policy::Gradient> grads(std::min(wave, n), total);
  std::vector<double> losses(grads.size());
  std::vector<std::exception_ptr> errors(grads.size());
  double loss = 0.0;
  for (std::size_t start = 0; start < n; start += wave) {
    const std::size_t m = std::min(wave, n - start);
#pragma omp parallel for num_threads(static_cast<int>(workers)) schedule(dynamic, 1)
    for (std::size_t j = 0; j < m; ++j) {
      try {
        grads[j].set_zero();
        losses[j] = fn(start + j, grads[j]);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (errors[j]) std::rethrow_exception(errors[j]);
      loss += losses[j];
      total += grads[j];
    }
  }
  return loss;
}

template <typename Fn>
double accumulate(std::size_t n, policy::Gradient& total, Fn&& fn, std::size_t workers) {
  return workers <= 1 ? accumulate_serial(n, total, fn) : accumulate_omp(n, total, fn, workers);
}

template <typename T, typename Fn>
std::vector<T> map_serial(std::size_t n, Fn&& fn) {
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
  return out;
}

template <typename T, typename Fn>
std::vector<T> map_omp(std::size_t n, Fn&& fn, std::size_t workers) {
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for num_threads(static_cast<int>(std::max<std::size_t>(workers, 1))) schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      out[i] = fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <typename T, typename Fn>
std::vector<T> map(std::size_t n, Fn&& fn, std::size_t workers) {
  return workers <= 1 ? map_serial<T>(n, fn) : map_omp<T>(n, fn, workers);
}

}  // namespace sspo::parallel
