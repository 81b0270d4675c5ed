// Copyright 2026 The SSPO Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "sspo/parallel.hpp"
#include "support.hpp"

using namespace sspo;
using policy::Gradient;

namespace {

// Item gradients with wildly different magnitudes, so any reordering of the
// reduction shows up in the last bits.
double item(std::size_t i, Gradient& g) {
  Rng rng(1000 + i);
  const double scale = std::pow(10.0, static_cast<double>(i % 13) - 6.0);
  for (double& x : g.base) x = scale * rng.normal();
  for (double& x : g.adapters) x = scale * rng.normal();
  return scale * rng.uniform(0.0, 1.0);
}

}  // namespace

TEST_CASE("accumulate: serial and OpenMP are bitwise equal") {
  const auto p = testing::random_params(1, true, false);
  for (std::size_t n : {0u, 1u, 5u, 37u}) {
    Gradient a = Gradient::zeros_like(p), b = a;
    const double la = parallel::accumulate_serial(n, a, item);
    for (std::size_t workers : {1u, 2u, 3u, 8u}) {
      b.set_zero();
      const double lb = parallel::accumulate_omp(n, b, item, workers);
      CHECK(la == lb);
      CHECK(a.base == b.base);
      CHECK(a.adapters == b.adapters);
    }
  }
}

TEST_CASE("accumulate adds onto the existing total") {
  const auto p = testing::random_params(2);
  Gradient g = Gradient::zeros_like(p);
  for (double& x : g.base) x = 1.0;
  parallel::accumulate_omp(3, g, [](std::size_t, Gradient& x) {
    for (double& v : x.base) v = 0.5;
    return 0.0;
  }, 2);
  for (double x : g.base) CHECK(x == 2.5);
}

TEST_CASE("map: serial and OpenMP agree") {
  auto fn = [](std::size_t i) {
    Rng rng(i);
    return rng.normal() * static_cast<double>(i);
  };
  const auto a = parallel::map_serial<double>(101, fn);
  for (std::size_t workers : {1u, 2u, 5u}) CHECK(parallel::map_omp<double>(101, fn, workers) == a);
  CHECK(parallel::map<double>(101, fn, 4) == a);
}

TEST_CASE("worker exceptions propagate") {
  const auto p = testing::random_params(3);
  Gradient g = Gradient::zeros_like(p);
  auto bad = [](std::size_t i, Gradient&) -> double {
    if (i == 6) fail(ErrorKind::domain, "item 6");
    return 1.0;
  };
  for (std::size_t workers : {1u, 3u}) {
    try {
      parallel::accumulate(10, g, bad, workers);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::domain);
    }
    CHECK_THROWS_AS(parallel::map<int>(
                        9, [](std::size_t i) -> int { return i == 4 ? throw std::runtime_error("x") : int(i); },
                        workers),
                    std::runtime_error);
  }
}
