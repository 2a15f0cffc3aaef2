// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Function of the given parameter values (same order as passed to
/// grad_check). Must be deterministic. Non-scalar results are checked through a
/// seeded random projection.
using ObjectiveFn = std::function<Tensor(const std::vector<Tensor>& params)>;

struct GradCheckOptions {
  double step = 1e-3;     // central-difference step
  // An entry passes when |analytic - numeric| <= rel_tol * max(|analytic|,
  // |numeric|, abs_floor) + noise, where noise is the difference quotient of
  // one float32 rounding step on every output the perturbation touched.
  double rel_tol = 1e-3;
  double abs_floor = 1e-4;
  int samples_per_param = 4;  // plus the entry with the largest analytic gradient
  uint64_t seed = 0;
  std::map<std::string, float> corrupt_backward;  // op name -> factor (negative controls)
};

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  double noise = 0.0;
  double excess = 0.0;  // max(0, |a - n| - noise) / scale; passes when <= rel_tol
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
  double max_excess() const;
  std::vector<std::string> failing_params() const;
  std::string summary() const;
};

GradCheckReport grad_check(const NamedTensors& params, const ObjectiveFn& objective,
                           const GradCheckOptions& options = {});

/// Fixed-weight scalar projection sum(x * w); the usual grad-check objective
/// for non-scalar outputs.
Tensor weighted_sum(const Tensor& x, const Tensor& weights);

}  // namespace motioneditor
