// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fabricnet/tensor.hpp"

namespace fabricnet::testing {

template <typename T>
BasicTensor<T> uniform_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  BasicTensor<T> t(std::move(shape), T{0});
  for (T& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
std::vector<T> uniform_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> out(n);
  for (T& v : out) v = static_cast<T>(u(rng));
  return out;
}

// max |a - b| / max(1, |b|) over all elements.
template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    worst = std::max(worst, d / std::max(1.0, std::abs(static_cast<double>(b[i]))));
  }
  return worst;
}

}  // namespace fabricnet::testing
