// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every differentiable op and of a small
// end-to-end FabricNet. Each check reduces the op output to a scalar with a
// fixed random weighting, perturbs sampled input coordinates by +-eps and
// compares the central difference with the analytic gradient. The reported
// error is norm-wise: |analytic - numeric| / max(|analytic|, |numeric|) over
// all sampled coordinates of the check.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fabricnet {

enum class Precision { kFloat32, kFloat64 };

struct GradCheckOptions {
  Precision precision = Precision::kFloat64;
  std::uint64_t seed = 0;
  std::size_t samples_per_tensor = 10;
  std::size_t model_samples_per_tensor = 3;
  bool include_model = true;
  // Adds an op whose backward is deliberately wrong; the run must fail.
  bool corrupt_backward = false;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // stencils that crossed a relu or maxpool switch
  bool passed = false;
};

double default_tolerance(Precision precision);  // 1e-6 or 1e-3
double default_epsilon(Precision precision);    // 1e-5 or 1e-3

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options);

}  // namespace fabricnet
